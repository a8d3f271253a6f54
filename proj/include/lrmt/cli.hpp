#pragma once

#include <ostream>

namespace lrmt::cli {

/// Entry point of the `lrmt` tool. Returns 0 on success, 1 on a runtime
/// failure and 2 on a configuration or usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lrmt::cli
