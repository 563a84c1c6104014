#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "emoattn/corpus_io.hpp"
#include "emoattn/error.hpp"
#include "emoattn/text_pipeline.hpp"
#include "emoattn/unicode.hpp"

namespace emoattn {

struct ConfusionCounts {
  std::array<long, kNumClasses> tp{};
  std::array<long, kNumClasses> fp{};
  std::array<long, kNumClasses> fn{};
};

inline ConfusionCounts confusion_counts(const std::vector<Emotion>& preds, const std::vector<Emotion>& gold) {
  if (preds.size() != gold.size()) {
    throw ShapeError("confusion_counts: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = static_cast<std::size_t>(preds[i]), g = static_cast<std::size_t>(gold[i]);
    if (p == g) {
      ++c.tp[g];
    } else {
      ++c.fp[p];
      ++c.fn[g];
    }
  }
  return c;
}

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline PRF prf_from_counts(double tp, double fp, double fn) {
  PRF r;
  r.precision = safe_div(tp, tp + fp);
  r.recall = safe_div(tp, tp + fn);
  // harmonic mean of P and R, written over the counts so it rounds once
  r.f1 = safe_div(2.0 * tp, 2.0 * tp + fp + fn);
  return r;
}

inline std::array<PRF, kNumClasses> per_class_prf(const std::vector<Emotion>& preds, const std::vector<Emotion>& gold) {
  const auto c = confusion_counts(preds, gold);
  std::array<PRF, kNumClasses> out{};
  for (std::size_t k = 0; k < kNumClasses; ++k) out[k] = prf_from_counts(c.tp[k], c.fp[k], c.fn[k]);
  return out;
}

/// Micro P/R/F1 pooled over happy, sad and angry; "others" is excluded.
inline PRF micro_prf(const ConfusionCounts& c) {
  long tp = 0, fp = 0, fn = 0;
  for (Emotion e : kEmotionClasses) {
    const auto k = static_cast<std::size_t>(e);
    tp += c.tp[k];
    fp += c.fp[k];
    fn += c.fn[k];
  }
  return prf_from_counts(tp, fp, fn);
}

inline double micro_f1(const ConfusionCounts& c) { return micro_prf(c).f1; }

struct MetricsReport {
  std::array<PRF, kNumClasses> per_class{};
  PRF micro;
  std::size_t n = 0;
};

inline MetricsReport evaluate_predictions(const std::vector<Emotion>& preds, const std::vector<Emotion>& gold) {
  MetricsReport r;
  r.per_class = per_class_prf(preds, gold);
  r.micro = micro_prf(confusion_counts(preds, gold));
  r.n = gold.size();
  return r;
}

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Per-emotion P, R, F1 then micro F1, one row per model.
inline void write_metrics_table(std::ostream& out, const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  out << "Model  | Happy P  R      F1     | Sad P    R      F1     | Angry P  R      F1     | Micro F1\n";
  for (const auto& [name, r] : rows) {
    out << name;
    for (std::size_t pad = name.size(); pad < 7; ++pad) out << ' ';
    for (Emotion e : kEmotionClasses) {
      const auto& m = r.per_class[static_cast<std::size_t>(e)];
      out << "| " << fmt4(m.precision) << " " << fmt4(m.recall) << " " << fmt4(m.f1) << " ";
    }
    out << "| " << fmt4(r.micro.f1) << "\n";
  }
}

inline void write_metrics_tsv(std::ostream& out, const std::string& model, const MetricsReport& r) {
  out << "model\tclass\tprecision\trecall\tf1\n";
  for (Emotion e : kEmotionClasses) {
    const auto& m = r.per_class[static_cast<std::size_t>(e)];
    out << model << "\t" << emotion_name(e) << "\t" << fmt4(m.precision) << "\t" << fmt4(m.recall) << "\t"
        << fmt4(m.f1) << "\n";
  }
  out << model << "\tmicro\t" << fmt4(r.micro.precision) << "\t" << fmt4(r.micro.recall) << "\t" << fmt4(r.micro.f1)
      << "\n";
}

// ---------------------------------------------------------------------------
// Attention-lexicon analysis

/// The ceil(frac * n) highest-scored tokens after dropping reserved marker
/// tokens; ties go to the earlier position. Output keeps score order.
inline std::vector<std::string> top_attention_tokens(const std::vector<std::string>& tokens,
                                                     const std::vector<double>& scores, double frac = 0.2) {
  if (tokens.size() != scores.size()) {
    throw ShapeError("top_attention_tokens: " + std::to_string(tokens.size()) + " tokens for " +
                     std::to_string(scores.size()) + " scores");
  }
  if (!(frac > 0.0 && frac <= 1.0)) throw Error("top_attention_tokens: frac must lie in (0, 1]");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!is_reserved_token(tokens[i])) idx.push_back(i);
  if (idx.empty()) return {};
  const auto k = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(idx.size()) - 1e-9));
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) out.push_back(tokens[idx[i]]);
  return out;
}

/// Rows: happy, sad, angry. Columns: joy, sadness, anger. Percent of the
/// row's selected tokens listed under the column's lexicon emotion.
struct AttentionReport {
  std::array<std::array<double, 3>, 3> cells{};
  std::array<std::size_t, 3> token_counts{};
};

inline AttentionReport lexicon_match(const std::map<Emotion, std::vector<std::string>>& selected,
                                     const EmotionLexicon& lexicon) {
  AttentionReport rep;
  for (std::size_t row = 0; row < 3; ++row) {
    auto it = selected.find(kEmotionClasses[row]);
    if (it == selected.end()) continue;
    std::array<std::size_t, 3> hits{};
    std::size_t total = 0;
    for (const auto& raw : it->second) {
      if (is_reserved_token(raw)) continue;
      const std::string tok = unicode::lower(raw);
      ++total;
      for (std::size_t col = 0; col < 3; ++col) {
        if (lexicon.contains(tok, static_cast<LexEmotion>(col))) ++hits[col];
      }
    }
    rep.token_counts[row] = total;
    for (std::size_t col = 0; col < 3; ++col) rep.cells[row][col] = total ? 100.0 * hits[col] / total : 0.0;
  }
  return rep;
}

inline std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v);
  return buf;
}

inline void write_attention_report(std::ostream& out, const AttentionReport& rep, const std::string& split = "") {
  out << "Attention  " << (split.empty() ? "" : "(" + split + ") ") << "| Joy      Sadness  Anger\n";
  for (std::size_t row = 0; row < 3; ++row) {
    std::string name(emotion_name(kEmotionClasses[row]));
    out << name;
    for (std::size_t pad = name.size(); pad < 11 + (split.empty() ? 0 : split.size() + 3); ++pad) out << ' ';
    out << "|";
    for (std::size_t col = 0; col < 3; ++col) {
      std::string cell = fmt_pct(rep.cells[row][col]);
      out << " " << cell;
      for (std::size_t pad = cell.size(); pad < 8; ++pad) out << ' ';
    }
    out << "\n";
  }
}

inline void write_attention_report_tsv(std::ostream& out, const AttentionReport& rep) {
  out << "emotion\tjoy\tsadness\tanger\ttokens\n";
  for (std::size_t row = 0; row < 3; ++row) {
    out << emotion_name(kEmotionClasses[row]);
    for (std::size_t col = 0; col < 3; ++col) out << "\t" << fmt4(rep.cells[row][col]);
    out << "\t" << rep.token_counts[row] << "\n";
  }
}

}  // namespace emoattn
