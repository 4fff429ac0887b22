#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace countgraph {

/// One evaluation question with its ten human answers. pair_id, when
/// present, links the two halves of a balanced pair (one question asked
/// on two different images).
struct AnnotatedQuestion {
  std::int64_t question_id = 0;
  std::string question;
  std::vector<std::string> answers;
  std::optional<std::int64_t> pair_id;
};

/// Lowercase, trim, collapse internal whitespace. Number words and
/// article stripping are deliberately not applied.
inline std::string normalize_answer(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

/// accuracy = min(matching humans / 3, 1).
inline double vqa_accuracy(const std::string& predicted,
                           const std::vector<std::string>& human_answers) {
  const std::string target = normalize_answer(predicted);
  int matches = 0;
  for (const std::string& answer : human_answers) {
    if (normalize_answer(answer) == target) ++matches;
  }
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

/// True iff the question starts with "how many", case-insensitively and
/// after leading whitespace.
inline bool is_count_question(std::string_view question) {
  std::size_t start = 0;
  while (start < question.size() &&
         std::isspace(static_cast<unsigned char>(question[start]))) {
    ++start;
  }
  constexpr std::string_view prefix = "how many";
  if (question.size() - start < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(question[start + i])) != prefix[i]) {
      return false;
    }
  }
  return true;
}

/// The annotation files carry no official answer-type field, so the
/// number category is derived: a question counts as a number question
/// when its modal human answer is a plain digit string, or when it is a
/// count question. The second clause makes the count category a subset of
/// the number category by construction.
inline bool is_number_question(const AnnotatedQuestion& q) {
  if (is_count_question(q.question)) return true;
  std::map<std::string, int> votes;
  for (const std::string& answer : q.answers) ++votes[normalize_answer(answer)];
  std::string modal;
  int best = 0;
  for (const auto& [answer, n] : votes) {
    if (n > best) {
      best = n;
      modal = answer;
    }
  }
  return !modal.empty() &&
         std::all_of(modal.begin(), modal.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

using Predictions = std::map<std::int64_t, std::string>;

inline const std::string& prediction_for(const Predictions& predictions,
                                         std::int64_t question_id) {
  const auto it = predictions.find(question_id);
  if (it == predictions.end()) {
    throw std::runtime_error("no prediction for question " + std::to_string(question_id));
  }
  return it->second;
}

struct PairStats {
  int pairs = 0;
  int correct = 0;

  double accuracy() const {
    return pairs == 0 ? 0.0 : static_cast<double>(correct) / pairs;
  }
};

/// Scores balanced pairs, optionally restricted to pairs whose both
/// members satisfy `keep`. A pair scores 1 only when both predictions
/// reach accuracy 1.0; questions without a pair_id are excluded.
inline PairStats balanced_pairs(const Predictions& predictions,
                                const std::vector<AnnotatedQuestion>& annotations,
                                const std::function<bool(const AnnotatedQuestion&)>& keep = {}) {
  std::map<std::int64_t, std::vector<const AnnotatedQuestion*>> groups;
  for (const AnnotatedQuestion& q : annotations) {
    if (q.pair_id) groups[*q.pair_id].push_back(&q);
  }
  PairStats stats;
  for (const auto& [pair_id, members] : groups) {
    if (members.size() != 2) {
      throw std::runtime_error("pair_id " + std::to_string(pair_id) + " links " +
                               std::to_string(members.size()) + " questions, expected 2");
    }
    if (keep && !(keep(*members[0]) && keep(*members[1]))) continue;
    ++stats.pairs;
    bool both = true;
    for (const AnnotatedQuestion* q : members) {
      if (vqa_accuracy(prediction_for(predictions, q->question_id), q->answers) < 1.0) {
        both = false;
      }
    }
    if (both) ++stats.correct;
  }
  return stats;
}

/// Fraction of balanced pairs answered correctly on both images; 0 when
/// the annotation set has no pairs.
inline double balanced_pair_accuracy(const Predictions& predictions,
                                     const std::vector<AnnotatedQuestion>& annotations) {
  return balanced_pairs(predictions, annotations).accuracy();
}

struct CategoryAccuracy {
  double mean = 0.0;
  int questions = 0;
};

struct CategoryReport {
  CategoryAccuracy number;
  CategoryAccuracy count;
  CategoryAccuracy all;
};

/// Mean accuracy per category. Count questions are exactly those passing
/// the "how many" filter and form a subset of the number questions.
inline CategoryReport category_report(const Predictions& predictions,
                                      const std::vector<AnnotatedQuestion>& annotations) {
  CategoryReport report;
  double number_sum = 0.0;
  double count_sum = 0.0;
  double all_sum = 0.0;
  for (const AnnotatedQuestion& q : annotations) {
    const double acc = vqa_accuracy(prediction_for(predictions, q.question_id), q.answers);
    all_sum += acc;
    ++report.all.questions;
    if (is_number_question(q)) {
      number_sum += acc;
      ++report.number.questions;
    }
    if (is_count_question(q.question)) {
      count_sum += acc;
      ++report.count.questions;
    }
  }
  if (report.all.questions > 0) report.all.mean = all_sum / report.all.questions;
  if (report.number.questions > 0) report.number.mean = number_sum / report.number.questions;
  if (report.count.questions > 0) report.count.mean = count_sum / report.count.questions;
  return report;
}

/// Predictions JSONL: {"question_id": ..., "answer": "..."}.
inline Predictions read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  Predictions predictions;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      predictions[j.at("question_id").get<std::int64_t>()] =
          j.at("answer").get<std::string>();
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << path << ":" << line_number << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
  }
  return predictions;
}

/// Annotations JSONL:
/// {"question_id": ..., "question": "...", "answers": [... x10], "pair_id": ...}.
inline std::vector<AnnotatedQuestion> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::vector<AnnotatedQuestion> annotations;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotatedQuestion q;
      q.question_id = j.at("question_id").get<std::int64_t>();
      q.question = j.at("question").get<std::string>();
      q.answers = j.at("answers").get<std::vector<std::string>>();
      if (q.answers.size() != 10) {
        throw std::invalid_argument("expected exactly 10 human answers");
      }
      if (j.contains("pair_id") && !j.at("pair_id").is_null()) {
        q.pair_id = j.at("pair_id").get<std::int64_t>();
      }
      annotations.push_back(std::move(q));
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << path << ":" << line_number << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
  }
  return annotations;
}

}  // namespace countgraph
