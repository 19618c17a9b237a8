#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "gsr/model.hpp"

namespace gsr {

enum class TrialLabel { target, nontarget };

struct Trial {
  std::string enrol_id;
  std::string test_id;
  TrialLabel label = TrialLabel::nontarget;
};

struct SegmentAnnotation {
  std::string session_id;
  std::string speaker_id;
  double start = 0.0;
  double end = 0.0;
  bool overlapped = false;
};

struct ScoreSet {
  std::vector<Trial> trials;
  std::vector<double> scores;  // one per trial, same order
};

/// a.b / (|a||b|), symmetric and scale-invariant. Zero-norm or
/// dimension-mismatched inputs raise invalid_argument.
double cosine_score(const SpeakerEmbedding& a, const SpeakerEmbedding& b);

struct EerResult {
  double eer = 0.0;       // fraction in [0, 1]
  double threshold = 0.0;  // score at the crossing
};

/// Equal error rate on the convex hull of the ROC staircase: the hull segment
/// bracketing the false-accept = false-reject diagonal is interpolated
/// linearly, as is the reported threshold. Needs at least one trial of each
/// label; scores must be finite.
EerResult compute_eer(const std::vector<double>& scores,
                      const std::vector<bool>& is_target);
EerResult compute_eer(const ScoreSet& scores);

/// Enumerates same-session verification pairs over non-overlapped segments:
/// same-speaker pairs are targets, cross-speaker pairs nontargets, never a
/// segment against itself. Segment ids are `session#index` with index
/// counting that session's surviving segments in input order. A nonnegative
/// per_session_cap keeps a seeded random subset of each session's pairs.
std::vector<Trial> generate_trials(
    const std::vector<SegmentAnnotation>& annotations,
    bool session_local = true, unsigned seed = 0, int per_session_cap = -1);

enum class TrialFormat { auto_detect, vox, sre };

/// Known protocol inventories; loading with a protocol name enforces them.
struct ProtocolCounts {
  long long n_target = 0;
  long long n_nontarget = 0;
  bool split_known = true;  // vox1_o pins only the total
};
const std::unordered_map<std::string, ProtocolCounts>& protocol_table();

/// Reads a trial list. Format vox: `label enrol test` with label 1=target;
/// format sre: `enrol test target|nontarget`. Auto-detection looks at the
/// first line. A declared protocol name enforces the published trial counts.
std::vector<Trial> load_trial_list(const std::string& path,
                                   TrialFormat format,
                                   const std::string& protocol = "");

/// One cosine score per trial, input order preserved. Unresolvable ids raise
/// runtime_error naming the id.
ScoreSet score_trials(
    const std::unordered_map<std::string, SpeakerEmbedding>& embeddings,
    const std::vector<Trial>& trials);

/// RTTM speaker lines: `SPEAKER session 1 onset duration <NA> <NA> spk ...`.
std::vector<SegmentAnnotation> load_rttm(const std::string& path);

/// Flags every segment that intersects another segment of its session.
void mark_overlaps(std::vector<SegmentAnnotation>& segments);

}  // namespace gsr
