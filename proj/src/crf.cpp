#include "nerdem/crf.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nerdem {

TagSet TagSet::bioes(const std::vector<std::string>& labels) {
  TagSet t;
  t.labels_ = labels;
  t.names_.push_back("O");
  for (const auto& l : labels)
    for (const char* p : {"B-", "I-", "E-", "S-"}) t.names_.push_back(p + l);
  for (int i = 0; i < static_cast<int>(t.names_.size()); ++i) t.by_name_[t.names_[i]] = i;
  return t;
}

int TagSet::index(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("unknown tag: " + name);
  return it->second;
}

Eigen::MatrixXd transition_mask(const TagSet& tags) {
  const int y = tags.size();
  const int start = tags.start_state();
  const int stop = tags.stop_state();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(y + 2, y + 2);
  auto kind = [&](int i) -> char { return i == start ? '^' : i == stop ? '$' : tags.name(i)[0]; };
  auto label = [&](int i) -> std::string {
    if (i == start || i == stop) return "";
    const auto& n = tags.name(i);
    return n == "O" ? "" : n.substr(2);
  };
  for (int a = 0; a < y + 2; ++a) {
    for (int b = 0; b < y + 2; ++b) {
      const char ka = kind(a), kb = kind(b);
      bool ok;
      if (ka == '$') {
        ok = false;
      } else if (kb == '^') {
        ok = false;
      } else if (ka == 'B' || ka == 'I') {
        ok = (kb == 'I' || kb == 'E') && label(a) == label(b);
      } else {  // O, E, S, START: entity closed
        ok = kb == 'O' || kb == 'B' || kb == 'S' || kb == '$';
      }
      if (!ok) m(a, b) = -1e4;
    }
  }
  return m;
}

double logsumexp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

namespace {

void check_shapes(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& trans) {
  if (emissions.rows() < 1) throw std::invalid_argument("emissions must have at least one row");
  if (trans.rows() != trans.cols() || trans.rows() != emissions.cols() + 2)
    throw std::invalid_argument("transition matrix must be (|Y|+2) square");
}

}  // namespace

double crf_score(const Eigen::MatrixXd& emissions, const std::vector<int>& tags,
                 const Eigen::MatrixXd& trans) {
  check_shapes(emissions, trans);
  const int n = static_cast<int>(emissions.rows());
  const int y = static_cast<int>(emissions.cols());
  if (static_cast<int>(tags.size()) != n)
    throw std::invalid_argument("tag sequence length " + std::to_string(tags.size()) +
                                " does not match emissions rows " + std::to_string(n));
  for (int t : tags)
    if (t < 0 || t >= y) throw std::invalid_argument("tag index out of range: " + std::to_string(t));
  const int start = y, stop = y + 1;
  double s = trans(start, tags[0]) + emissions(0, tags[0]);
  for (int t = 1; t < n; ++t) s += trans(tags[t - 1], tags[t]) + emissions(t, tags[t]);
  s += trans(tags[n - 1], stop);
  return s;
}

double crf_log_partition(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& trans) {
  check_shapes(emissions, trans);
  const int n = static_cast<int>(emissions.rows());
  const int y = static_cast<int>(emissions.cols());
  const int start = y, stop = y + 1;
  Eigen::VectorXd alpha =
      trans.row(start).head(y).transpose() + emissions.row(0).transpose();
  Eigen::VectorXd next(y), terms(y);
  for (int t = 1; t < n; ++t) {
    for (int j = 0; j < y; ++j) {
      terms = alpha + trans.col(j).head(y);
      next(j) = logsumexp(terms) + emissions(t, j);
    }
    alpha = next;
  }
  terms = alpha + trans.col(stop).head(y);
  return logsumexp(terms);
}

double crf_log_likelihood(const Eigen::MatrixXd& emissions, const std::vector<int>& tags,
                          const Eigen::MatrixXd& trans) {
  return crf_score(emissions, tags, trans) - crf_log_partition(emissions, trans);
}

ViterbiResult crf_viterbi(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& trans) {
  check_shapes(emissions, trans);
  const int n = static_cast<int>(emissions.rows());
  const int y = static_cast<int>(emissions.cols());
  const int start = y, stop = y + 1;

  Eigen::MatrixXd delta(n, y);
  Eigen::MatrixXi back(n, y);
  for (int j = 0; j < y; ++j) delta(0, j) = trans(start, j) + emissions(0, j);
  // Strict > keeps the lowest-index argmax; combined with the final strict
  // argmax this backtrace is minimal at the latest differing position among
  // co-optimal paths.
  for (int t = 1; t < n; ++t) {
    for (int j = 0; j < y; ++j) {
      int best_i = 0;
      double best = delta(t - 1, 0) + trans(0, j);
      for (int i = 1; i < y; ++i) {
        const double v = delta(t - 1, i) + trans(i, j);
        if (v > best) {
          best = v;
          best_i = i;
        }
      }
      delta(t, j) = best + emissions(t, j);
      back(t, j) = best_i;
    }
  }
  int best_j = 0;
  double best = delta(n - 1, 0) + trans(0, stop);
  for (int j = 1; j < y; ++j) {
    const double v = delta(n - 1, j) + trans(j, stop);
    if (v > best) {
      best = v;
      best_j = j;
    }
  }
  ViterbiResult r;
  r.score = best;
  r.tags.assign(n, 0);
  r.tags[n - 1] = best_j;
  for (int t = n - 1; t > 0; --t) r.tags[t - 1] = back(t, r.tags[t]);
  return r;
}

CrfGradients crf_gradients(const Eigen::MatrixXd& emissions, const std::vector<int>& tags,
                           const Eigen::MatrixXd& trans) {
  check_shapes(emissions, trans);
  const int n = static_cast<int>(emissions.rows());
  const int y = static_cast<int>(emissions.cols());
  const int start = y, stop = y + 1;
  if (static_cast<int>(tags.size()) != n)
    throw std::invalid_argument("tag sequence length does not match emissions rows");
  for (int t : tags)
    if (t < 0 || t >= y) throw std::invalid_argument("tag index out of range: " + std::to_string(t));

  Eigen::MatrixXd alpha(n, y), beta(n, y);
  alpha.row(0) = trans.row(start).head(y) + emissions.row(0);
  Eigen::VectorXd terms(y);
  for (int t = 1; t < n; ++t) {
    for (int j = 0; j < y; ++j) {
      terms = alpha.row(t - 1).transpose() + trans.col(j).head(y);
      alpha(t, j) = logsumexp(terms) + emissions(t, j);
    }
  }
  terms = alpha.row(n - 1).transpose() + trans.col(stop).head(y);
  const double log_z = logsumexp(terms);

  beta.row(n - 1) = trans.col(stop).head(y).transpose();
  for (int t = n - 2; t >= 0; --t) {
    for (int i = 0; i < y; ++i) {
      terms = trans.row(i).head(y).transpose() + emissions.row(t + 1).transpose() +
              beta.row(t + 1).transpose();
      beta(t, i) = logsumexp(terms);
    }
  }

  CrfGradients g;
  g.marginals = ((alpha + beta).array() - log_z).exp();
  g.d_emissions = g.marginals;
  for (int t = 0; t < n; ++t) g.d_emissions(t, tags[t]) -= 1.0;

  g.d_transitions = Eigen::MatrixXd::Zero(y + 2, y + 2);
  for (int t = 0; t + 1 < n; ++t) {
    for (int i = 0; i < y; ++i) {
      for (int j = 0; j < y; ++j) {
        g.d_transitions(i, j) +=
            std::exp(alpha(t, i) + trans(i, j) + emissions(t + 1, j) + beta(t + 1, j) - log_z);
      }
    }
    g.d_transitions(tags[t], tags[t + 1]) -= 1.0;
  }
  for (int j = 0; j < y; ++j) g.d_transitions(start, j) += g.marginals(0, j);
  g.d_transitions(start, tags[0]) -= 1.0;
  for (int j = 0; j < y; ++j) g.d_transitions(j, stop) += g.marginals(n - 1, j);
  g.d_transitions(tags[n - 1], stop) -= 1.0;
  return g;
}

}  // namespace nerdem
