#pragma once

#include <string>

namespace uniam {

enum class Domain { source, target };

inline std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

}  // namespace uniam
