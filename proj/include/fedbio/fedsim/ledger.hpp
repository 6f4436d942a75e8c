#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fedbio {

enum class Direction { kUplink, kDownlink };

std::string_view to_string(Direction d);

/// Payload kinds used by the simulator. Free-form strings are accepted; these are the shipped ones.
namespace payload {
inline constexpr std::string_view kModelBroadcast = "model_broadcast";
inline constexpr std::string_view kInnerUpdate = "inner_update";
inline constexpr std::string_view kStateBroadcast = "state_broadcast";
inline constexpr std::string_view kVBroadcast = "v_broadcast";
inline constexpr std::string_view kHvpDense = "hvp_dense";
inline constexpr std::string_view kHvpTopK = "hvp_topk";
inline constexpr std::string_view kHvpSketch = "hvp_sketch";
inline constexpr std::string_view kXyProduct = "xy_product";
inline constexpr std::string_view kSketchSeeds = "sketch_seeds";
inline constexpr std::string_view kSketchedHessian = "sketched_hessian";
inline constexpr std::string_view kSketchedCross = "sketched_cross";
inline constexpr std::string_view kOmegaBroadcast = "omega_broadcast";
}  // namespace payload

inline constexpr int kAllClients = -1;

struct LedgerRecord {
  int round = 0;
  Direction direction = Direction::kUplink;
  std::string kind;
  int client = kAllClients;  // kAllClients marks a single multicast message
  std::int64_t scalars = 0;
  std::int64_t bytes = 0;
};

struct LedgerTotals {
  std::int64_t uplink_scalars = 0;
  std::int64_t downlink_scalars = 0;
  std::int64_t uplink_bytes = 0;
  std::int64_t downlink_bytes = 0;

  std::int64_t scalars() const { return uplink_scalars + downlink_scalars; }
  std::int64_t bytes() const { return uplink_bytes + downlink_bytes; }
};

/// Append-only log of every simulated server/client transfer.
class CommLedger {
 public:
  void set_round(int round) { round_ = round; }
  int round() const { return round_; }

  void record(Direction direction, std::string_view kind, int client, std::int64_t scalars, std::int64_t bytes);
  void uplink(std::string_view kind, int client, std::int64_t scalars, std::int64_t bytes) {
    record(Direction::kUplink, kind, client, scalars, bytes);
  }
  void downlink(std::string_view kind, int client, std::int64_t scalars, std::int64_t bytes) {
    record(Direction::kDownlink, kind, client, scalars, bytes);
  }

  const std::vector<LedgerRecord>& records() const { return records_; }
  const LedgerTotals& totals() const { return totals_; }

  /// Totals over records matching the filters; empty kind / negative round / client == kAnyClient match all.
  static constexpr int kAnyClient = -2;
  LedgerTotals totals_where(std::string_view kind = {}, int round = -1, int client = kAnyClient) const;

 private:
  int round_ = 0;
  std::vector<LedgerRecord> records_;
  LedgerTotals totals_;
};

}  // namespace fedbio
