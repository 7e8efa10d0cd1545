#pragma once

#include <string>
#include <vector>

namespace bcrl::reward {

enum class AnnotationKind {
  gaze_at_partner,
  speech_turn,
  laugh,
  smile,
  nod,
  head_shake,
};

AnnotationKind annotation_kind_from_string(const std::string& s);
std::string to_string(AnnotationKind k);
bool is_backchannel(AnnotationKind k);

struct AnnotationEvent {
  std::string track;  // participant id within the dialog, e.g. "A" / "B"
  AnnotationKind kind = AnnotationKind::speech_turn;
  double start = 0.0, end = 0.0;
};

struct Interval {
  double start = 0.0, end = 0.0;
};

enum class CeKind { mutual_facial_gaze, adjacency_pair, backchannel };

struct ConnectionEvent {
  CeKind kind = CeKind::backchannel;
  double time = 0.0;  // onset, seconds
};

struct EngagementConfig {
  double window_s = 15.0;
  bool forward_window = true;  // [t, t+W); trailing mode uses [t-W, t)
  double min_gaze_overlap_s = 0.3;
  double max_adjacency_gap_s = 2.0;
};

struct EngagementSeries {
  double rate_hz = 40.0;
  std::vector<int> ce_count;    // CEs in the window at each step
  std::vector<double> mtbce;    // seconds; +inf when count == 0
  std::vector<double> pace;     // CE per second
  std::vector<double> reward;   // r_t = pace
};

// One CE per maximal intersection of an A-interval with a B-interval of
// length >= min_overlap; CE time = intersection start.
std::vector<ConnectionEvent> detect_mutual_gaze(const std::vector<Interval>& gaze_a,
                                                const std::vector<Interval>& gaze_b,
                                                double min_overlap_s = 0.3);

// CE when one speaker's turn ends and the other's next turn starts within
// [0, max_gap]; CE time = responding turn's start.
std::vector<ConnectionEvent> detect_adjacency_pairs(
    const std::vector<Interval>& turns_a, const std::vector<Interval>& turns_b,
    double max_gap_s = 2.0);

// CE at each listener backchannel whose onset falls inside a speaker turn.
std::vector<ConnectionEvent> detect_backchannels(
    const std::vector<double>& bc_onsets_listener,
    const std::vector<Interval>& turns_speaker);

std::vector<ConnectionEvent> merge_sorted(std::vector<ConnectionEvent> a,
                                          std::vector<ConnectionEvent> b);

// Pace/MTBCE/reward at every 40 Hz step of the dialog.  Windows truncated at
// the dialog boundary use the covered duration as T.
EngagementSeries compute_engagement(const std::vector<ConnectionEvent>& ces,
                                    double dialog_length_s,
                                    const EngagementConfig& cfg = {});

// JSON Lines: one {"track":..,"kind":..,"start_s":..,"end_s":..} per line.
std::vector<AnnotationEvent> read_annotations(const std::string& path);
void write_annotations(const std::string& path,
                       const std::vector<AnnotationEvent>& events);

std::vector<Interval> intervals_of(const std::vector<AnnotationEvent>& events,
                                   const std::string& track, AnnotationKind kind);
std::vector<double> backchannel_onsets(const std::vector<AnnotationEvent>& events,
                                       const std::string& track);

// Full CE stream for a dialog where `actor_track` is the behavior-policy
// participant (the listener) and `env_track` their partner: mutual gaze,
// adjacency pairs in both directions, and the actor's backchannels during
// the partner's speaking turns.
std::vector<ConnectionEvent> connection_events(
    const std::vector<AnnotationEvent>& events, const std::string& actor_track,
    const std::string& env_track, const EngagementConfig& cfg = {});

}  // namespace bcrl::reward
