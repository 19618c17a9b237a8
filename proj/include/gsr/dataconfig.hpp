#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gsr {

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  double duration_sec = 0.0;
  std::string language;
  std::string dataset;
  int sample_rate = 16000;
  std::string path;
};

struct DatasetTotals {
  long long n_speakers = 0;
  long long n_utterances = 0;
  double hours = 0.0;
};

/// A training corpus: either concrete utterance records or an aggregate stub
/// carrying just the bookkeeping totals.
struct DatasetDescriptor {
  std::string name;
  std::vector<UtteranceRecord> records;
  bool is_stub = false;
  DatasetTotals stub;
  // Narrow-band sources must opt in to rate conversion before features.
  bool resample_to_16k = false;

  DatasetTotals totals() const;
};

struct DataConfig {
  std::string version;
  std::vector<DatasetDescriptor> members;
  DatasetTotals totals;
};

class compose_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Canonical member list for a configuration version v0..v4.
/// Unknown versions raise invalid_argument.
const std::vector<std::string>& config_members(const std::string& version);

/// Assembles a named configuration from its member descriptors. Membership is
/// validated against config_members; totals are componentwise sums taken in
/// canonical member order, so they do not depend on argument order.
DataConfig compose(const std::string& version,
                   const std::vector<DatasetDescriptor>& descriptors);

inline constexpr double kSpeakerDurationCap = 1500.0;  // 25 minutes

/// Per-speaker duration cap: speakers at or under the limit are untouched;
/// otherwise utterances are scanned in ascending utterance-id order and each
/// one is kept iff it still fits (first fit). Record order is preserved.
DatasetDescriptor cap_speaker_duration(const DatasetDescriptor& descriptor,
                                       double limit_seconds =
                                           kSpeakerDurationCap);

/// Consistency report: mismatched totals, duplicate utterance ids, malformed
/// records, and narrow-band sources lacking the resample flag. Empty when the
/// configuration is clean.
std::vector<std::string> validate(const DataConfig& config);

/// Manifest rows: one utterance per line, tab-separated
/// `utterance_id speaker_id duration_sec language dataset sample_rate path`.
std::vector<UtteranceRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<UtteranceRecord>& records);

/// Reads either format: a `#stub` header introduces an aggregate line
/// `dataset n_speakers n_utterances total_hours`; anything else is parsed as
/// manifest rows (which must all share one dataset name).
DatasetDescriptor read_descriptor(const std::string& path);
void write_stub(const std::string& path, const std::string& name,
                long long n_speakers, long long n_utterances,
                double total_hours);

}  // namespace gsr
