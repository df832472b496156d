#pragma once

#include <json.hpp>

#include "lrds/address_space.hpp"
#include "lrds/layout.hpp"

namespace lrds {

inline constexpr int kSchemaVersion = 1;

/// Range list with hex addresses, "rw"/"r-"/"--" permissions and content
/// tags, followed by the overlay words. Stable ordering (ascending address).
nlohmann::json to_json(const AddressSpace& space);
nlohmann::json to_json(const MemoryLayout& layout);
/// One row per ASLR offset: name, interval, bits, entropy.
nlohmann::json entropy_table(const LayoutConfig& config);

/// Rebuilds an address space from to_json() output (ranges and words only).
AddressSpace address_space_from_json(const nlohmann::json& j);

}  // namespace lrds
