#include "apss/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace apss {

namespace {

template <typename T>
double sdr_plain(std::span<const T> est, std::span<const T> ref) {
  if (est.size() != ref.size() || est.empty()) throw ShapeError("sdr: length mismatch or empty signal");
  double rr = 0.0, ee = 0.0;
  bool nonzero = false;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double r = ref[i];
    const double d = static_cast<double>(est[i]) - r;
    nonzero = nonzero || r != 0.0;
    rr += r * r;
    ee += d * d;
  }
  if (!nonzero) throw DataError("sdr: reference signal is identically zero");
  return 10.0 * std::log10((rr + kSiSnrEps) / (ee + kSiSnrEps));
}

const char* permutation_name(Permutation p) { return p == Permutation::swap ? "swap" : "identity"; }

}  // namespace

double sdr(std::span<const float> est, std::span<const float> ref) { return sdr_plain(est, ref); }
double sdr(std::span<const double> est, std::span<const double> ref) { return sdr_plain(est, ref); }

double si_snri(std::span<const float> est, std::span<const float> ref, std::span<const float> mix) {
  return si_snr(est, ref) - si_snr(mix, ref);
}

double sdri(std::span<const float> est, std::span<const float> ref, std::span<const float> mix) {
  return sdr(est, ref) - sdr(mix, ref);
}

UtteranceScore score_utterance(const Utterance& utt, const std::vector<float>& est1, const std::vector<float>& est2) {
  const std::span<const float> r1(utt.source1.samples), r2(utt.source2.samples), mix(utt.mixture.samples);
  if (est1.size() != mix.size() || est2.size() != mix.size()) {
    throw ShapeError("evaluate: estimate length differs from mixture for " + utt.id);
  }
  const double identity = si_snr(std::span<const float>(est1), r1) + si_snr(std::span<const float>(est2), r2);
  const double swapped = si_snr(std::span<const float>(est2), r1) + si_snr(std::span<const float>(est1), r2);
  UtteranceScore s;
  s.id = utt.id;
  s.permutation = swapped > identity ? Permutation::swap : Permutation::identity;
  const auto& a1 = s.permutation == Permutation::swap ? est2 : est1;
  const auto& a2 = s.permutation == Permutation::swap ? est1 : est2;
  s.source_si_snri = {si_snri(a1, r1, mix), si_snri(a2, r2, mix)};
  s.source_sdri = {sdri(a1, r1, mix), sdri(a2, r2, mix)};
  s.si_snri_db = 0.5 * (s.source_si_snri[0] + s.source_si_snri[1]);
  s.sdri_db = 0.5 * (s.source_sdri[0] + s.source_sdri[1]);
  return s;
}

EvalReport evaluate_set(const Separator& separate, const Manifest& manifest) {
  if (manifest.empty()) throw DataError("evaluate: manifest is empty");
  EvalReport report;
  for (const auto& entry : manifest) {
    try {
      const auto utt = load_utterance(entry);
      const auto [e1, e2] = separate(utt.mixture.samples);
      report.utterances.push_back(score_utterance(utt, e1, e2));
    } catch (const NumericalError&) {
      throw;
    } catch (const Error& e) {
      report.errors.push_back(entry.mixture + ": " + e.what());
    }
  }
  if (report.utterances.empty()) throw DataError("evaluate: every manifest entry failed; first: " + report.errors.front());
  double si = 0.0, sd = 0.0;
  for (const auto& u : report.utterances) {
    si += u.si_snri_db;
    sd += u.sdri_db;
    (u.permutation == Permutation::swap ? report.swap_count : report.identity_count) += 1;
  }
  report.mean_si_snri_db = si / static_cast<double>(report.count());
  report.mean_sdri_db = sd / static_cast<double>(report.count());
  return report;
}

EvalReport evaluate_set(const ApssModel<float>& model, const Manifest& manifest) {
  return evaluate_set(
      [&model](const std::vector<float>& mix) {
        Waveform w{mix, kSampleRate};
        auto [a, b] = model.separate(w);
        return std::pair{std::move(a.samples), std::move(b.samples)};
      },
      manifest);
}

void write_report(const EvalReport& report, std::ostream& out) {
  out << "utterance\tsi_snri_db\tsdri_db\tpermutation\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& u : report.utterances) {
    out << u.id << '\t' << u.si_snri_db << '\t' << u.sdri_db << '\t' << permutation_name(u.permutation) << '\n';
  }
  out << "# summary\tutterances=" << report.count() << "\tskipped=" << report.skipped()
      << "\tmean_si_snri_db=" << report.mean_si_snri_db << "\tmean_sdri_db=" << report.mean_sdri_db
      << "\tsdr=sdr-plain\tidentity=" << report.identity_count << "\tswap=" << report.swap_count << '\n';
}

}  // namespace apss
