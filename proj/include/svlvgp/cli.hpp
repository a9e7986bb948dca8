#pragma once

namespace svlvgp::cli {

// Dispatches the command line. Exit codes: 0 success, 2 usage, 3 bad data,
// 4 numeric failure. Errors print a single line: error[<code>]: <message>.
int run(int argc, char** argv);

}  // namespace svlvgp::cli
