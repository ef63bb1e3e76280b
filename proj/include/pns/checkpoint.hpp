#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "pns/baselines.hpp"
#include "pns/enn.hpp"
#include "pns/neural.hpp"

namespace pns {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A trained model of one method. Exactly one of the model members is set:
/// `anchored` for anchored and bootstrap methods, `enn` for the ENN,
/// `plug_in` for the S- and T-learners.
struct Checkpoint {
  Method method = Method::anchored;
  std::optional<TrainedAnchored> anchored;
  std::optional<TrainedEnn> enn;
  std::optional<PlugInModel> plug_in;
  /// Caller data kept verbatim (config snapshot, seeds, data paths).
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

/// Layout: 8-byte magic "PNSCKPT\0", u32 version, u64 header length, a JSON
/// header, then the little-endian float64 blobs the header lists in order.
/// Parameters round-trip bit for bit.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws PnsError("format") on a bad magic, version or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pns
