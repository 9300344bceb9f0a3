#pragma once

namespace dbcd::cli {

/// Entry point of the command-line tool. Exit codes: 0 success, 1 usage
/// error, 2 data error, 3 numerical failure.
int run(int argc, const char* const* argv);

}  // namespace dbcd::cli
