#pragma once

namespace hr3d {

// Full command-line surface; argv[0] is the program name.  Returns the
// process exit code: 0 success, 1 usage error, 2 data error, 3 numeric
// failure.  Errors also print a machine-readable "error: <kind>: <what>"
// line on stderr.
int cli_main(int argc, const char* const* argv);

}  // namespace hr3d
