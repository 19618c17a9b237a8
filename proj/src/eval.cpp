#include "gsr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gsr {

double cosine_score(const SpeakerEmbedding& a, const SpeakerEmbedding& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("cosine_score: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_score: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Equal error rate

namespace {

struct RocPoint {
  double far;  // accepted nontargets / nontargets
  double frr;  // rejected targets / targets
  double threshold;
};

// Operating points of the accept-if-score>=t rule, one per distinct score,
// plus the accept-nothing anchor. far is nondecreasing, frr nonincreasing.
std::vector<RocPoint> roc_staircase(const std::vector<double>& scores,
                                    const std::vector<bool>& is_target) {
  long long n_target = 0, n_nontarget = 0;
  for (bool t : is_target) t ? ++n_target : ++n_nontarget;

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<RocPoint> points;
  points.push_back({0.0, 1.0, scores[order.front()] + 1.0});
  long long acc_t = 0, acc_n = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      is_target[order[i]] ? ++acc_t : ++acc_n;
      ++i;
    }
    points.push_back({static_cast<double>(acc_n) / n_nontarget,
                      static_cast<double>(n_target - acc_t) / n_target, s});
  }
  return points;
}

// Lower-left convex hull (far ascending). Collinear points are dropped.
std::vector<RocPoint> lower_hull(const std::vector<RocPoint>& points) {
  std::vector<RocPoint> hull;
  for (const RocPoint& p : points) {
    while (!hull.empty() && hull.back().far == p.far &&
           hull.back().frr >= p.frr)
      hull.pop_back();
    while (hull.size() >= 2) {
      const RocPoint& a = hull[hull.size() - 2];
      const RocPoint& b = hull.back();
      const double cross = (b.far - a.far) * (p.frr - a.frr) -
                           (b.frr - a.frr) * (p.far - a.far);
      if (cross <= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(p);
  }
  return hull;
}

}  // namespace

EerResult compute_eer(const std::vector<double>& scores,
                      const std::vector<bool>& is_target) {
  if (scores.size() != is_target.size() || scores.empty())
    throw std::invalid_argument("compute_eer: need one label per score");
  long long n_target = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw std::invalid_argument("compute_eer: non-finite score");
    if (is_target[i]) ++n_target;
  }
  if (n_target == 0 || n_target == static_cast<long long>(scores.size()))
    throw std::invalid_argument(
        "compute_eer: need both target and nontarget trials");

  const std::vector<RocPoint> hull =
      lower_hull(roc_staircase(scores, is_target));

  for (std::size_t k = 0; k < hull.size(); ++k) {
    if (hull[k].frr > hull[k].far) continue;
    if (hull[k].frr == hull[k].far)
      return {hull[k].far, hull[k].threshold};
    const RocPoint& a = hull[k - 1];  // k>0: the anchor has frr=1 > far=0
    const RocPoint& b = hull[k];
    const double dx = b.far - a.far;
    const double dy = b.frr - a.frr;
    const double t = (a.frr - a.far) / (dx - dy);
    return {a.far + t * dx, a.threshold + t * (b.threshold - a.threshold)};
  }
  return {hull.back().far, hull.back().threshold};  // unreachable
}

EerResult compute_eer(const ScoreSet& scores) {
  std::vector<bool> is_target(scores.trials.size());
  for (std::size_t i = 0; i < scores.trials.size(); ++i)
    is_target[i] = scores.trials[i].label == TrialLabel::target;
  return compute_eer(scores.scores, is_target);
}

// ---------------------------------------------------------------------------
// Trials

std::vector<Trial> generate_trials(
    const std::vector<SegmentAnnotation>& annotations, bool session_local,
    unsigned seed, int per_session_cap) {
  // Surviving segments get ids `session#k`, k counting that session's
  // non-overlapped segments in input order; the pairing pool is the session
  // (or everything, when session_local is off).
  struct Segment {
    std::string id;
    const SegmentAnnotation* ann;
  };
  std::unordered_map<std::string, int> session_counts;
  std::vector<std::string> pools;
  std::map<std::string, std::vector<Segment>> by_pool;
  for (const auto& a : annotations) {
    if (a.overlapped) continue;
    const int k = session_counts[a.session_id]++;
    const std::string pool = session_local ? a.session_id : std::string();
    auto [it, inserted] = by_pool.try_emplace(pool);
    if (inserted) pools.push_back(pool);
    it->second.push_back({a.session_id + "#" + std::to_string(k), &a});
  }

  std::vector<Trial> trials;
  for (const auto& pool : pools) {
    const auto& segs = by_pool[pool];
    std::vector<Trial> local;
    for (std::size_t i = 0; i < segs.size(); ++i) {
      for (std::size_t j = i + 1; j < segs.size(); ++j) {
        Trial t;
        t.enrol_id = segs[i].id;
        t.test_id = segs[j].id;
        t.label = segs[i].ann->speaker_id == segs[j].ann->speaker_id
                      ? TrialLabel::target
                      : TrialLabel::nontarget;
        local.push_back(std::move(t));
      }
    }
    if (per_session_cap >= 0 &&
        static_cast<int>(local.size()) > per_session_cap) {
      unsigned h = 2166136261u;  // FNV-1a so the subset is pool-specific
      for (const unsigned char c : pool) h = (h ^ c) * 16777619u;
      std::mt19937 rng(seed ^ h);
      for (std::size_t i = 0; i + 1 < local.size(); ++i)
        std::swap(local[i], local[i + rng() % (local.size() - i)]);
      local.resize(per_session_cap);
    }
    trials.insert(trials.end(), local.begin(), local.end());
  }
  return trials;
}

const std::unordered_map<std::string, ProtocolCounts>& protocol_table() {
  static const std::unordered_map<std::string, ProtocolCounts> table = {
      {"vox1_o", {37611, 0, false}},
      {"dihard3", {243738, 182460, true}},
      {"voxconverse", {85452, 140734, true}},
      {"sre10", {540, 54180, true}},
  };
  return table;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::vector<Trial> load_trial_list(const std::string& path,
                                   TrialFormat format,
                                   const std::string& protocol) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trial list '" + path + "'");

  std::vector<Trial> trials;
  std::string line;
  int line_no = 0;
  TrialFormat fmt = format;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f = split_ws(line);
    if (f.size() != 3)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 3 fields");
    if (fmt == TrialFormat::auto_detect)
      fmt = (f[0] == "0" || f[0] == "1") ? TrialFormat::vox
                                         : TrialFormat::sre;
    Trial t;
    if (fmt == TrialFormat::vox) {
      if (f[0] != "0" && f[0] != "1")
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": label must be 0 or 1");
      t.label = f[0] == "1" ? TrialLabel::target : TrialLabel::nontarget;
      t.enrol_id = f[1];
      t.test_id = f[2];
    } else {
      if (f[2] != "target" && f[2] != "nontarget")
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": label must be target or nontarget");
      t.enrol_id = f[0];
      t.test_id = f[1];
      t.label = f[2] == "target" ? TrialLabel::target : TrialLabel::nontarget;
    }
    trials.push_back(std::move(t));
  }

  if (!protocol.empty()) {
    auto it = protocol_table().find(protocol);
    if (it == protocol_table().end())
      throw std::runtime_error("unknown protocol '" + protocol + "'");
    long long n_target = 0, n_nontarget = 0;
    for (const auto& t : trials)
      t.label == TrialLabel::target ? ++n_target : ++n_nontarget;
    const ProtocolCounts& want = it->second;
    const long long total = n_target + n_nontarget;
    const long long want_total = want.n_target + want.n_nontarget;
    if (!want.split_known) {
      if (total != want_total)
        throw std::runtime_error(
            protocol + ": expected " + std::to_string(want_total) +
            " trials, got " + std::to_string(total));
    } else if (n_target != want.n_target ||
               n_nontarget != want.n_nontarget) {
      throw std::runtime_error(
          protocol + ": expected " + std::to_string(want.n_target) + "+" +
          std::to_string(want.n_nontarget) + " = " +
          std::to_string(want_total) + " trials, got " +
          std::to_string(n_target) + "+" + std::to_string(n_nontarget) +
          " = " + std::to_string(total));
    }
  }
  return trials;
}

ScoreSet score_trials(
    const std::unordered_map<std::string, SpeakerEmbedding>& embeddings,
    const std::vector<Trial>& trials) {
  auto resolve = [&](const std::string& id) -> const SpeakerEmbedding& {
    auto it = embeddings.find(id);
    if (it == embeddings.end())
      throw std::runtime_error("no embedding for id '" + id + "'");
    return it->second;
  };
  ScoreSet out;
  out.trials = trials;
  out.scores.reserve(trials.size());
  for (const auto& t : trials)
    out.scores.push_back(cosine_score(resolve(t.enrol_id),
                                      resolve(t.test_id)));
  return out;
}

std::vector<SegmentAnnotation> load_rttm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rttm '" + path + "'");
  std::vector<SegmentAnnotation> segments;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f = split_ws(line);
    if (f.empty()) continue;
    if (f[0] != "SPEAKER") continue;  // other record types are skipped
    if (f.size() < 8)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": short SPEAKER line");
    SegmentAnnotation a;
    a.session_id = f[1];
    try {
      a.start = std::stod(f[3]);
      a.end = a.start + std::stod(f[4]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": bad onset/duration");
    }
    if (!(a.end > a.start))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": non-positive duration");
    a.speaker_id = f[7];
    segments.push_back(std::move(a));
  }
  return segments;
}

void mark_overlaps(std::vector<SegmentAnnotation>& segments) {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    for (std::size_t j = i + 1; j < segments.size(); ++j) {
      if (segments[i].session_id != segments[j].session_id) continue;
      if (segments[i].start < segments[j].end &&
          segments[j].start < segments[i].end) {
        segments[i].overlapped = true;
        segments[j].overlapped = true;
      }
    }
  }
}

}  // namespace gsr
