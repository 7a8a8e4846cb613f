#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtmsim/protocols.hpp"

namespace mtmsim::test {

// One fixed representative per protocol message type, built from constant
// inputs only (no RNG, no keys), keyed by its golden file stem.
std::vector<std::pair<std::string, ProtocolMessage>> golden_messages();

}  // namespace mtmsim::test
