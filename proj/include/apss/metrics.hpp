#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apss/data_io.hpp"
#include "apss/model.hpp"
#include "apss/objective.hpp"

namespace apss {

// Plain energy ratio 10 log10((|ref|^2 + eps) / (|est - ref|^2 + eps)).
// Not scale invariant; no distortion projection. Reported as "sdr-plain".
double sdr(std::span<const float> est, std::span<const float> ref);
double sdr(std::span<const double> est, std::span<const double> ref);

double si_snri(std::span<const float> est, std::span<const float> ref, std::span<const float> mix);
double sdri(std::span<const float> est, std::span<const float> ref, std::span<const float> mix);

struct UtteranceScore {
  std::string id;
  double si_snri_db = 0.0;  // mean over both sources
  double sdri_db = 0.0;
  Permutation permutation = Permutation::identity;
  std::array<double, 2> source_si_snri{};
  std::array<double, 2> source_sdri{};
};

struct EvalReport {
  std::vector<UtteranceScore> utterances;
  double mean_si_snri_db = 0.0;
  double mean_sdri_db = 0.0;
  std::size_t identity_count = 0;
  std::size_t swap_count = 0;
  std::vector<std::string> errors;  // one per skipped entry

  std::size_t count() const { return utterances.size(); }
  std::size_t skipped() const { return errors.size(); }
};

using Separator = std::function<std::pair<std::vector<float>, std::vector<float>>(const std::vector<float>& mixture)>;

// Aligns both estimates to the references jointly by maximum summed SI-SNR,
// then scores each aligned source against the mixture baseline.
UtteranceScore score_utterance(const Utterance& utt, const std::vector<float>& est1, const std::vector<float>& est2);

// Unreadable or malformed entries are skipped and listed in errors.
// Throws DataError for an empty manifest or when every entry fails.
EvalReport evaluate_set(const Separator& separate, const Manifest& manifest);
EvalReport evaluate_set(const ApssModel<float>& model, const Manifest& manifest);

// Tab-separated: utterance, si_snri_db, sdri_db, permutation, then a summary line.
void write_report(const EvalReport& report, std::ostream& out);

}  // namespace apss
