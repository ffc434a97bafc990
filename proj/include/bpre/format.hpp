#pragma once

#include <string>

namespace bpre {

/// Shortest decimal text that reads back to the same double ("nan", "inf"
/// for non-finite values). Used for every CSV field so artifacts are
/// byte-stable.
std::string format_real(double v);

}  // namespace bpre
