#include "fedbio/fedsim/ledger.hpp"

#include "fedbio/core.hpp"

namespace fedbio {

std::string_view to_string(Direction d) { return d == Direction::kUplink ? "uplink" : "downlink"; }

void CommLedger::record(Direction direction, std::string_view kind, int client, std::int64_t scalars,
                        std::int64_t bytes) {
  require(scalars >= 0 && bytes >= 0, "ledger: negative transfer size");
  records_.push_back({round_, direction, std::string(kind), client, scalars, bytes});
  if (direction == Direction::kUplink) {
    totals_.uplink_scalars += scalars;
    totals_.uplink_bytes += bytes;
  } else {
    totals_.downlink_scalars += scalars;
    totals_.downlink_bytes += bytes;
  }
}

LedgerTotals CommLedger::totals_where(std::string_view kind, int round, int client) const {
  LedgerTotals t;
  for (const auto& r : records_) {
    if (!kind.empty() && r.kind != kind) continue;
    if (round >= 0 && r.round != round) continue;
    if (client != kAnyClient && r.client != client) continue;
    if (r.direction == Direction::kUplink) {
      t.uplink_scalars += r.scalars;
      t.uplink_bytes += r.bytes;
    } else {
      t.downlink_scalars += r.scalars;
      t.downlink_bytes += r.bytes;
    }
  }
  return t;
}

}  // namespace fedbio
