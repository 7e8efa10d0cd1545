#include "bcrl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace bcrl::reward {

using nlohmann::json;

AnnotationKind annotation_kind_from_string(const std::string& s) {
  if (s == "gaze-at-partner") return AnnotationKind::gaze_at_partner;
  if (s == "speech-turn") return AnnotationKind::speech_turn;
  if (s == "laugh") return AnnotationKind::laugh;
  if (s == "smile") return AnnotationKind::smile;
  if (s == "nod") return AnnotationKind::nod;
  if (s == "head-shake") return AnnotationKind::head_shake;
  throw std::runtime_error("unknown annotation kind: " + s);
}

std::string to_string(AnnotationKind k) {
  switch (k) {
    case AnnotationKind::gaze_at_partner: return "gaze-at-partner";
    case AnnotationKind::speech_turn: return "speech-turn";
    case AnnotationKind::laugh: return "laugh";
    case AnnotationKind::smile: return "smile";
    case AnnotationKind::nod: return "nod";
    case AnnotationKind::head_shake: return "head-shake";
  }
  return "?";
}

bool is_backchannel(AnnotationKind k) {
  return k == AnnotationKind::laugh || k == AnnotationKind::smile ||
         k == AnnotationKind::nod || k == AnnotationKind::head_shake;
}

std::vector<ConnectionEvent> detect_mutual_gaze(const std::vector<Interval>& gaze_a,
                                                const std::vector<Interval>& gaze_b,
                                                double min_overlap_s) {
  std::vector<ConnectionEvent> out;
  for (const auto& a : gaze_a) {
    for (const auto& b : gaze_b) {
      const double lo = std::max(a.start, b.start);
      const double hi = std::min(a.end, b.end);
      if (hi - lo >= min_overlap_s)
        out.push_back({CeKind::mutual_facial_gaze, lo});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& x, const auto& y) { return x.time < y.time; });
  return out;
}

std::vector<ConnectionEvent> detect_adjacency_pairs(
    const std::vector<Interval>& turns_a, const std::vector<Interval>& turns_b,
    double max_gap_s) {
  std::vector<ConnectionEvent> out;
  auto scan = [&](const std::vector<Interval>& ending,
                  const std::vector<Interval>& responding) {
    for (const auto& e : ending) {
      // first turn of the other speaker starting at or after the turn end
      const Interval* next = nullptr;
      for (const auto& r : responding)
        if (r.start >= e.end && (!next || r.start < next->start)) next = &r;
      if (next && next->start - e.end <= max_gap_s)
        out.push_back({CeKind::adjacency_pair, next->start});
    }
  };
  scan(turns_a, turns_b);
  scan(turns_b, turns_a);
  std::sort(out.begin(), out.end(),
            [](const auto& x, const auto& y) { return x.time < y.time; });
  return out;
}

std::vector<ConnectionEvent> detect_backchannels(
    const std::vector<double>& bc_onsets_listener,
    const std::vector<Interval>& turns_speaker) {
  std::vector<ConnectionEvent> out;
  for (double onset : bc_onsets_listener) {
    for (const auto& t : turns_speaker) {
      if (onset >= t.start && onset < t.end) {
        out.push_back({CeKind::backchannel, onset});
        break;
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto& x, const auto& y) { return x.time < y.time; });
  return out;
}

std::vector<ConnectionEvent> merge_sorted(std::vector<ConnectionEvent> a,
                                          std::vector<ConnectionEvent> b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end(),
            [](const auto& x, const auto& y) { return x.time < y.time; });
  return a;
}

EngagementSeries compute_engagement(const std::vector<ConnectionEvent>& ces,
                                    double dialog_length_s,
                                    const EngagementConfig& cfg) {
  if (cfg.window_s <= 0.0) throw std::invalid_argument("engagement window must be > 0");
  if (!std::is_sorted(ces.begin(), ces.end(), [](const auto& x, const auto& y) {
        return x.time < y.time;
      }))
    throw std::invalid_argument("CE stream must be sorted by time");
  EngagementSeries s;
  const long n = std::lround(dialog_length_s * s.rate_hz);
  s.ce_count.resize(n);
  s.mtbce.resize(n);
  s.pace.resize(n);
  s.reward.resize(n);
  for (long k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / s.rate_hz;
    double lo, hi;
    if (cfg.forward_window) {
      lo = t;
      hi = std::min(t + cfg.window_s, dialog_length_s);
    } else {
      lo = std::max(t - cfg.window_s, 0.0);
      hi = t;
    }
    const double T = hi - lo;
    int count = 0;
    for (const auto& ce : ces)
      if (ce.time >= lo && ce.time < hi) ++count;
    s.ce_count[k] = count;
    if (count > 0 && T > 0.0) {
      s.mtbce[k] = T / count;
      s.pace[k] = count / T;
    } else {
      s.mtbce[k] = std::numeric_limits<double>::infinity();
      s.pace[k] = 0.0;
    }
    s.reward[k] = s.pace[k];
  }
  return s;
}

std::vector<AnnotationEvent> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotations: " + path);
  std::vector<AnnotationEvent> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line);
    AnnotationEvent e;
    e.track = j.at("track").get<std::string>();
    e.kind = annotation_kind_from_string(j.at("kind").get<std::string>());
    e.start = j.at("start_s").get<double>();
    e.end = j.at("end_s").get<double>();
    if (!(e.start < e.end))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": event start must precede end");
    out.push_back(std::move(e));
  }
  return out;
}

void write_annotations(const std::string& path,
                       const std::vector<AnnotationEvent>& events) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : events) {
    json j{{"track", e.track},
           {"kind", to_string(e.kind)},
           {"start_s", e.start},
           {"end_s", e.end}};
    out << j.dump() << '\n';
  }
}

std::vector<Interval> intervals_of(const std::vector<AnnotationEvent>& events,
                                   const std::string& track, AnnotationKind kind) {
  std::vector<Interval> out;
  for (const auto& e : events)
    if (e.track == track && e.kind == kind) out.push_back({e.start, e.end});
  std::sort(out.begin(), out.end(),
            [](const auto& x, const auto& y) { return x.start < y.start; });
  return out;
}

std::vector<double> backchannel_onsets(const std::vector<AnnotationEvent>& events,
                                       const std::string& track) {
  std::vector<double> out;
  for (const auto& e : events)
    if (e.track == track && is_backchannel(e.kind)) out.push_back(e.start);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ConnectionEvent> connection_events(
    const std::vector<AnnotationEvent>& events, const std::string& actor_track,
    const std::string& env_track, const EngagementConfig& cfg) {
  const auto gaze_a = intervals_of(events, actor_track, AnnotationKind::gaze_at_partner);
  const auto gaze_b = intervals_of(events, env_track, AnnotationKind::gaze_at_partner);
  const auto turns_a = intervals_of(events, actor_track, AnnotationKind::speech_turn);
  const auto turns_b = intervals_of(events, env_track, AnnotationKind::speech_turn);
  auto ces = detect_mutual_gaze(gaze_a, gaze_b, cfg.min_gaze_overlap_s);
  ces = merge_sorted(std::move(ces),
                     detect_adjacency_pairs(turns_a, turns_b, cfg.max_adjacency_gap_s));
  // The actor is the listener: only the actor's backchannels during the
  // environment participant's speaking turns count toward the reward.
  ces = merge_sorted(std::move(ces),
                     detect_backchannels(backchannel_onsets(events, actor_track),
                                         turns_b));
  return ces;
}

}  // namespace bcrl::reward
