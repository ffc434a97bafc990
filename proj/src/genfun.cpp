#include "bpre/genfun.hpp"

#include <stdexcept>

namespace bpre {

Composition extend_right(const Composition& comp, const FracLinLaw& law) {
  Composition out;
  out.first = comp.first;
  out.last = comp.last + 1;
  out.neg_log_a = comp.neg_log_a + law.x();
  out.log_b = log_add_exp(comp.log_b, law.log_eta() - comp.neg_log_a);
  return out;
}

Composition extend_left(const Composition& comp, const FracLinLaw& law) {
  if (comp.first == 0) throw std::logic_error("extend_left past generation 0");
  Composition out;
  out.first = comp.first - 1;
  out.last = comp.last;
  out.neg_log_a = comp.neg_log_a + law.x();
  out.log_b = log_add_exp(law.log_eta(), comp.log_b - law.x());
  return out;
}

Composition splice(const Composition& outer, const Composition& inner) {
  if (outer.last != inner.first) throw std::logic_error("splice of non-adjacent spans");
  Composition out;
  out.first = outer.first;
  out.last = inner.last;
  out.neg_log_a = outer.neg_log_a + inner.neg_log_a;
  out.log_b = log_add_exp(outer.log_b, inner.log_b - outer.neg_log_a);
  return out;
}

Composition compose(std::span<const FracLinLaw> laws, std::size_t first, std::size_t last) {
  if (first > last || last > laws.size()) throw std::out_of_range("compose span");
  Composition c = Composition::identity(first);
  for (std::size_t i = first; i < last; ++i) c = extend_right(c, laws[i]);
  return c;
}

double log1m_eval(const Composition& comp, double s) {
  if (!(s >= 0.0 && s < 1.0)) throw std::domain_error("log1m_eval needs s in [0,1)");
  return -log_add_exp(-comp.neg_log_a - std::log1p(-s), comp.log_b);
}

double eval(const Composition& comp, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw std::domain_error("eval needs s in [0,1]");
  if (s == 1.0) return 1.0;
  if (comp.empty()) return s;
  return -std::expm1(log1m_eval(comp, s));
}

double log_eval_difference(const Composition& comp, double log_dr, double log1m_r1,
                           double log1m_r2) {
  const double log_a = -comp.neg_log_a;
  return log_a + log_dr - log_add_exp(log_a, comp.log_b + log1m_r1) -
         log_add_exp(log_a, comp.log_b + log1m_r2);
}

double log_extinction_increment(const Composition& comp, const FracLinLaw& law) {
  const double log_denom = std::log(law.denom());
  return log_eval_difference(comp, law.log_denom_minus_one() - log_denom, -log_denom, 0.0);
}

ExtinctionPmf extinction_pmf_given_env(std::span<const FracLinLaw> laws) {
  if (laws.empty()) throw std::invalid_argument("extinction pmf needs at least one law");
  ExtinctionPmf out;
  out.pmf.reserve(laws.size());
  Composition comp = Composition::identity(0);
  for (const auto& law : laws) {
    out.pmf.push_back(std::exp(log_extinction_increment(comp, law)));
    comp = extend_right(comp, law);
  }
  out.survival = comp.survival();
  return out;
}

PrefixTable::PrefixTable(std::span<const FracLinLaw> laws, std::size_t n) {
  if (laws.size() < n) throw std::out_of_range("prefix table longer than environment");
  comps_.reserve(n + 1);
  comps_.push_back(Composition::identity(0));
  for (std::size_t m = 0; m < n; ++m) comps_.push_back(extend_right(comps_.back(), laws[m]));
}

SuffixTable::SuffixTable(std::span<const FracLinLaw> laws, std::size_t n)
    : next_(laws.size() > n ? laws[n] : throw std::out_of_range("suffix table needs n+1 laws")) {
  comps_.resize(n + 1);
  comps_[n] = Composition::identity(n);
  for (std::size_t m = n; m-- > 0;) comps_[m] = extend_left(comps_[m + 1], laws[m]);
  log1m_alpha_.resize(n + 1);
  log_gap_.resize(n + 1);
  for (std::size_t m = 0; m <= n; ++m) {
    log1m_alpha_[m] = extend_right(comps_[m], next_).log_survival();
    log_gap_[m] = log_extinction_increment(comps_[m], next_);
  }
}

}  // namespace bpre
