#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctesret/tape.hpp"

namespace ctesret {

// One event of a continuous-time marked sequence.
struct Event {
  double time = 0.0;
  int mark = 0;
};

// Ordered events on the observation window [0, T). Times are strictly
// increasing and every event time is below the horizon.
struct EventSequence {
  std::string id;
  std::vector<Event> events;
  double horizon = 0.0;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
};

struct RelevanceLabel {
  std::string query_id;
  std::string corpus_id;
  int label = 0;  // +1 relevant, -1 not
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct Dataset {
  std::vector<EventSequence> queries;
  std::vector<EventSequence> corpus;
  std::vector<RelevanceLabel> labels;
  Split split;

  const EventSequence* find_query(const std::string& id) const;
  const EventSequence* find_corpus(const std::string& id) const;
  // corpus ids labeled +1 for the query.
  std::vector<std::string> positives(const std::string& query_id) const;
  std::vector<std::string> negatives(const std::string& query_id) const;
  int label_of(const std::string& query_id, const std::string& corpus_id) const;
  double max_horizon() const;
};

// nullopt when all EventSequence invariants hold. `n_marks <= 0` skips the
// mark-vocabulary check.
std::optional<ErrorCode> validate_sequence(const EventSequence& seq, int n_marks = -1);
void require_valid(const EventSequence& seq, int n_marks = -1);

// Inter-event gaps with the t_0 = 0 convention; element i is t_i - t_{i-1}.
std::vector<double> inter_event_times(const EventSequence& seq);

// JSON-lines persistence: one {"id", "T", "events": [[t, mark], ...]} per line.
void save_sequences(const std::string& path, const std::vector<EventSequence>& seqs);
std::vector<EventSequence> load_sequences(const std::string& path);

void save_labels(const std::string& path, const std::vector<RelevanceLabel>& labels);
std::vector<RelevanceLabel> load_labels(const std::string& path);

void save_split(const std::string& path, const Split& split);
Split load_split(const std::string& path);

// Loads corpus.jsonl, queries.jsonl, labels.jsonl and splits.json from a
// directory written by the synth command.
Dataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const Dataset& dataset);

}  // namespace ctesret
