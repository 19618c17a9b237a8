#include "gsr/dataconfig.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace gsr {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
}

[[noreturn]] void parse_fail(const std::string& path, int line_no,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

double parse_positive(const std::string& path, int line_no,
                      const std::string& field, const std::string& text) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    parse_fail(path, line_no, "bad " + field + " '" + text + "'");
  }
  if (used != text.size() || !(value > 0.0))
    parse_fail(path, line_no, "bad " + field + " '" + text + "'");
  return value;
}

long long parse_count(const std::string& path, int line_no,
                      const std::string& field, const std::string& text) {
  std::size_t used = 0;
  long long value = 0;
  try {
    value = std::stoll(text, &used);
  } catch (const std::exception&) {
    parse_fail(path, line_no, "bad " + field + " '" + text + "'");
  }
  if (used != text.size() || value < 0)
    parse_fail(path, line_no, "bad " + field + " '" + text + "'");
  return value;
}

}  // namespace

DatasetTotals DatasetDescriptor::totals() const {
  if (is_stub) return stub;
  DatasetTotals t;
  std::unordered_set<std::string> speakers;
  double seconds = 0.0;
  for (const auto& r : records) {
    speakers.insert(r.speaker_id);
    seconds += r.duration_sec;
  }
  t.n_speakers = static_cast<long long>(speakers.size());
  t.n_utterances = static_cast<long long>(records.size());
  t.hours = seconds / 3600.0;
  return t;
}

const std::vector<std::string>& config_members(const std::string& version) {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"v0", {"voxceleb"}},
      {"v1", {"voxceleb", "sre", "cv_de_es_fr_it"}},
      {"v2", {"voxceleb", "sre", "cv_de_es_fr_it", "cv_kab_lg_ru_be_ca"}},
      {"v3", {"voxceleb", "sre", "cv_de_es_fr_it", "mls"}},
      {"v4",
       {"voxceleb", "sre", "cv_de_es_fr_it", "cv_kab_lg_ru_be_ca", "mls"}},
  };
  auto it = table.find(version);
  if (it == table.end())
    throw std::invalid_argument("unknown data configuration '" + version +
                                "'");
  return it->second;
}

DataConfig compose(const std::string& version,
                   const std::vector<DatasetDescriptor>& descriptors) {
  const std::vector<std::string>& required = config_members(version);

  std::unordered_map<std::string, const DatasetDescriptor*> by_name;
  for (const auto& d : descriptors) {
    if (!by_name.emplace(d.name, &d).second)
      throw compose_error(version + ": duplicate descriptor '" + d.name + "'");
  }
  for (const auto& d : descriptors) {
    if (std::find(required.begin(), required.end(), d.name) == required.end())
      throw compose_error(version + ": unexpected descriptor '" + d.name +
                          "'");
  }

  DataConfig config;
  config.version = version;
  for (const auto& name : required) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw compose_error(version + ": missing descriptor '" + name + "'");
    config.members.push_back(*it->second);
    DatasetTotals t = it->second->totals();
    config.totals.n_speakers += t.n_speakers;
    config.totals.n_utterances += t.n_utterances;
    config.totals.hours += t.hours;
  }
  return config;
}

DatasetDescriptor cap_speaker_duration(const DatasetDescriptor& descriptor,
                                       double limit_seconds) {
  if (descriptor.is_stub || descriptor.records.empty()) return descriptor;

  std::unordered_map<std::string, double> speaker_total;
  for (const auto& r : descriptor.records)
    speaker_total[r.speaker_id] += r.duration_sec;

  // Indices of each over-limit speaker's utterances, in ascending id order.
  std::unordered_map<std::string, std::vector<std::size_t>> over;
  for (std::size_t i = 0; i < descriptor.records.size(); ++i) {
    const auto& r = descriptor.records[i];
    if (speaker_total[r.speaker_id] > limit_seconds)
      over[r.speaker_id].push_back(i);
  }

  std::vector<bool> keep(descriptor.records.size(), true);
  for (auto& [speaker, indices] : over) {
    std::sort(indices.begin(), indices.end(), [&](std::size_t a,
                                                  std::size_t b) {
      return descriptor.records[a].utterance_id <
             descriptor.records[b].utterance_id;
    });
    double used = 0.0;
    for (std::size_t i : indices) {
      const double d = descriptor.records[i].duration_sec;
      if (used + d <= limit_seconds)
        used += d;
      else
        keep[i] = false;
    }
  }

  DatasetDescriptor out = descriptor;
  out.records.clear();
  for (std::size_t i = 0; i < descriptor.records.size(); ++i)
    if (keep[i]) out.records.push_back(descriptor.records[i]);
  return out;
}

std::vector<std::string> validate(const DataConfig& config) {
  std::vector<std::string> report;

  DatasetTotals sum;
  for (const auto& m : config.members) {
    DatasetTotals t = m.totals();
    sum.n_speakers += t.n_speakers;
    sum.n_utterances += t.n_utterances;
    sum.hours += t.hours;
  }
  if (sum.n_speakers != config.totals.n_speakers ||
      sum.n_utterances != config.totals.n_utterances)
    report.push_back(config.version + ": totals do not match member sums");
  if (std::abs(sum.hours - config.totals.hours) > 10.0)
    report.push_back(config.version + ": hours off by more than 0.01k");

  std::unordered_set<std::string> seen;
  for (const auto& m : config.members) {
    if (m.is_stub && !m.records.empty()) {
      DatasetTotals derived;
      std::unordered_set<std::string> speakers;
      for (const auto& r : m.records) speakers.insert(r.speaker_id);
      if (static_cast<long long>(m.records.size()) != m.stub.n_utterances ||
          static_cast<long long>(speakers.size()) != m.stub.n_speakers)
        report.push_back(m.name + ": stub totals disagree with records");
    }

    long long off_rate = 0;
    int off_rate_hz = 0;
    for (const auto& r : m.records) {
      if (r.utterance_id.empty() || r.speaker_id.empty())
        report.push_back(m.name + ": record with empty id");
      if (!(r.duration_sec > 0.0))
        report.push_back(m.name + ": non-positive duration for '" +
                         r.utterance_id + "'");
      // Speaker ids are namespaced by dataset, so only same-dataset
      // duplicates are collisions.
      if (!seen.insert(m.name + "/" + r.utterance_id).second)
        report.push_back(m.name + ": duplicate utterance id '" +
                         r.utterance_id + "'");
      if (r.sample_rate != 16000) {
        ++off_rate;
        off_rate_hz = r.sample_rate;
      }
    }
    if (off_rate > 0 && !m.resample_to_16k)
      report.push_back(m.name + ": " + std::to_string(off_rate) +
                       " records at " + std::to_string(off_rate_hz) +
                       " Hz need the resample flag");
  }
  return report;
}

std::vector<UtteranceRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");

  std::vector<UtteranceRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f = split_tabs(line);
    if (f.size() != 7)
      parse_fail(path, line_no,
                 "expected 7 tab-separated fields, got " +
                     std::to_string(f.size()));
    UtteranceRecord r;
    r.utterance_id = f[0];
    r.speaker_id = f[1];
    if (r.utterance_id.empty() || r.speaker_id.empty())
      parse_fail(path, line_no, "empty id");
    r.duration_sec = parse_positive(path, line_no, "duration", f[2]);
    r.language = f[3];
    r.dataset = f[4];
    r.sample_rate = static_cast<int>(parse_count(path, line_no,
                                                 "sample_rate", f[5]));
    r.path = f[6];
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::string& path,
                    const std::vector<UtteranceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.6g", r.duration_sec);
    out << r.utterance_id << '\t' << r.speaker_id << '\t' << buf << '\t'
        << r.language << '\t' << r.dataset << '\t' << r.sample_rate << '\t'
        << r.path << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

DatasetDescriptor read_descriptor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open descriptor '" + path + "'");
  std::string first;
  std::getline(in, first);

  DatasetDescriptor d;
  if (first == "#stub") {
    std::string line;
    int line_no = 1;
    bool have = false;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      if (have) parse_fail(path, line_no, "more than one stub line");
      std::vector<std::string> f = split_tabs(line);
      if (f.size() != 4)
        parse_fail(path, line_no, "expected 4 tab-separated fields");
      d.name = f[0];
      if (d.name.empty()) parse_fail(path, line_no, "empty dataset name");
      d.is_stub = true;
      d.stub.n_speakers = parse_count(path, line_no, "n_speakers", f[1]);
      d.stub.n_utterances = parse_count(path, line_no, "n_utterances", f[2]);
      d.stub.hours = parse_positive(path, line_no, "total_hours", f[3]);
      have = true;
    }
    if (!have) throw std::runtime_error(path + ": stub file has no data line");
    return d;
  }

  d.records = read_manifest(path);
  if (d.records.empty())
    throw std::runtime_error(path + ": descriptor has no records");
  d.name = d.records.front().dataset;
  for (const auto& r : d.records)
    if (r.dataset != d.name)
      throw std::runtime_error(path + ": mixed dataset names ('" + d.name +
                               "' vs '" + r.dataset + "')");
  return d;
}

void write_stub(const std::string& path, const std::string& name,
                long long n_speakers, long long n_utterances,
                double total_hours) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write stub '" + path + "'");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", total_hours);
  out << "#stub\n"
      << name << '\t' << n_speakers << '\t' << n_utterances << '\t' << buf
      << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace gsr
