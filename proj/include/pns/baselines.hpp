#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pns/bounds.hpp"
#include "pns/dataset.hpp"
#include "pns/network.hpp"
#include "pns/neural.hpp"

namespace pns {

/// Unconstrained MLP classifier on standardised covariates: the anchored
/// backbone with a single head. One output means a logistic model, four a
/// softmax over (x, y) cells.
struct Classifier {
  NetworkLayout layout;
  ParamVector params;
  TrainingLog log;

  std::size_t classes() const { return layout.output_dim() == 1 ? 2 : layout.output_dim(); }
  /// Columns of z -> class probabilities (P(y=1) row for a logistic model).
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& z) const;
};

/// Mini-batch Adam on the cross-entropy; labels are class indices.
/// `outputs` is 1 (logistic) or the class count.
Classifier train_classifier(const ArchSpec& arch, std::size_t outputs, std::uint64_t init_seed,
                            const Eigen::MatrixXd& z, std::span<const std::uint8_t> labels,
                            const TrainConfig& cfg);

/// Plug-in estimator: a 4-class joint model for p_xy on observational rows
/// and separate outcome model(s) for mu_x on experimental rows, with no
/// coordination between them.
struct PlugInModel {
  Method method = Method::s_learner;
  Standardizer standardizer;
  Classifier joint;
  /// S-learner: one model on (z, x). T-learner: the control-arm model.
  Classifier outcome;
  /// T-learner only: the treated-arm model.
  Classifier outcome_treated;

  /// Raw covariate rows -> atoms (possibly infeasible).
  std::vector<AtomVector> predict_atoms(const Eigen::MatrixXd& rows) const;
};

/// The joint model is identical for both learners; pass a fitted one to
/// skip refitting it.
PlugInModel fit_s_learner(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                          const Dataset& exp, const TrainConfig& cfg,
                          const Classifier* shared_joint = nullptr);
PlugInModel fit_t_learner(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                          const Dataset& exp, const TrainConfig& cfg,
                          const Classifier* shared_joint = nullptr);

/// Joint-model fit shared by both learners (standardised with the joint
/// observational + experimental statistics).
Classifier fit_joint_model(const ArchSpec& arch, std::uint64_t init_seed, const Dataset& obs,
                           const Dataset& exp, const TrainConfig& cfg);

struct PlugInPrediction {
  PnsInterval interval;
  AtomVector atoms;
  /// Atoms fail check_feasibility at kAuditTolerance.
  bool violation = false;
};

/// Tian-Pearl formulas applied directly to the atoms, with a feasibility audit.
PlugInPrediction plug_in_predict(const AtomVector& atoms, Method method);
std::vector<PlugInPrediction> plug_in_predict(const PlugInModel& model, const Eigen::MatrixXd& rows);

}  // namespace pns
