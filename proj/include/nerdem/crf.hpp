#pragma once

#include <Eigen/Dense>
#include <string>
#include <unordered_map>
#include <vector>

namespace nerdem {

// BIOES tag inventory over a label set: O first, then B/I/E/S per label in
// label-set order. The tag order is load-bearing (Viterbi tie-breaks, model
// persistence), so it is fixed here and nowhere else.
class TagSet {
 public:
  static TagSet bioes(const std::vector<std::string>& labels);

  int size() const { return static_cast<int>(names_.size()); }
  int start_state() const { return size(); }
  int stop_state() const { return size() + 1; }
  const std::string& name(int i) const { return names_.at(i); }
  int index(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> by_name_;
};

// 0 where the transition respects BIOES structure, -1e4 elsewhere. Shape
// (|Y|+2)^2 with START/STOP in the last two rows/columns. Added to the learned
// transition matrix when hard masking is enabled.
Eigen::MatrixXd transition_mask(const TagSet& tags);

// Transition matrices are (|Y|+2)x(|Y|+2): entry (a,b) scores a -> b, with
// START = |Y| and STOP = |Y|+1. Emissions are (n x |Y|).

double crf_score(const Eigen::MatrixXd& emissions, const std::vector<int>& tags,
                 const Eigen::MatrixXd& trans);

double crf_log_partition(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& trans);

// log p(y|h) = score(y) - logZ
double crf_log_likelihood(const Eigen::MatrixXd& emissions, const std::vector<int>& tags,
                          const Eigen::MatrixXd& trans);

struct ViterbiResult {
  std::vector<int> tags;
  double score = 0.0;
};

// Among co-optimal paths returns the one with the lowest tag index at the
// latest position where they differ.
ViterbiResult crf_viterbi(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& trans);

struct CrfGradients {
  Eigen::MatrixXd d_emissions;   // n x |Y|
  Eigen::MatrixXd d_transitions; // (|Y|+2)^2
  Eigen::MatrixXd marginals;     // n x |Y|, p(y_t = j | h)
};

// Gradients of -log p(y|h) via forward-backward: expected counts minus
// observed counts.
CrfGradients crf_gradients(const Eigen::MatrixXd& emissions, const std::vector<int>& tags,
                           const Eigen::MatrixXd& trans);

double logsumexp(const Eigen::VectorXd& v);

}  // namespace nerdem
