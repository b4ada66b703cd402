#pragma once

#include <iosfwd>

namespace nnspec {

// Exit codes: 0 ok, 2 usage or domain error, 1 any numerical failure.
// Errors go to `err` as {"error": {"kind": ..., "message": ...}}.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nnspec
