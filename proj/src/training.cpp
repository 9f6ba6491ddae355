#include "magic/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace magic {

Batch Batch::from(std::vector<const Sample*> samples) {
  Batch b;
  b.samples = std::move(samples);
  for (int i = 0; i < static_cast<int>(b.samples.size()); ++i)
    (b.samples[i]->label ? b.labeled : b.unlabeled).push_back(i);
  return b;
}

void Batch::validate() const {
  if (samples.empty()) throw InputError("batch is empty");
  std::vector<int> seen(samples.size(), 0);
  for (int i : labeled) {
    if (i < 0 || i >= static_cast<int>(samples.size()) || seen[i]++)
      throw InputError("batch: labeled indices must be distinct and in range");
    if (!samples[i]->label) throw InputError("batch: labeled sample " + samples[i]->id + " has no label");
  }
  for (int i : unlabeled)
    if (i < 0 || i >= static_cast<int>(samples.size()) || seen[i]++)
      throw InputError("batch: labeled and unlabeled sets must be disjoint");
  for (int s : seen)
    if (!s) throw InputError("batch: every sample must be labeled or unlabeled");
}

double mse_loss(const std::vector<ImageGrid>& pred, const std::vector<ImageGrid>& labels) {
  if (pred.size() != labels.size() || pred.empty())
    throw InputError("mse_loss: need equally many (>= 1) predictions and labels");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].rows() != labels[i].rows() || pred[i].cols() != labels[i].cols())
      throw InputError("mse_loss: shape mismatch at sample " + std::to_string(i));
    sum += (pred[i].values - labels[i].values).squaredNorm();
  }
  return sum / static_cast<double>(pred.size());
}

double projection_loss(const std::vector<ImageGrid>& pred, const std::vector<Sinogram>& sinos, const Projector& proj) {
  if (pred.size() != sinos.size() || pred.empty())
    throw InputError("projection_loss: need equally many (>= 1) predictions and sinograms");
  double sum = 0.0;
  Matrix s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!sinos[i].matches(proj.geometry())) throw InputError("projection_loss: sinogram does not match geometry");
    proj.forward(pred[i].values, s);
    sum += (s - sinos[i].values).squaredNorm();
  }
  return sum / static_cast<double>(pred.size());
}

LossTerms semi_loss(const Batch& batch, const std::vector<ImageGrid>& preds, const Projector& proj,
                    double proj_weight, std::vector<ImageGrid>* grads) {
  batch.validate();
  if (preds.size() != batch.samples.size()) throw InputError("semi_loss: one prediction per sample required");
  if (grads) {
    grads->clear();
    for (const auto& p : preds) grads->emplace_back(p.rows(), p.cols());
  }
  LossTerms out;
  if (!batch.labeled.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.labeled.size());
    double sum = 0.0;
    for (int i : batch.labeled) {
      const Matrix r = preds[i].values - batch.samples[i]->label->values;
      sum += r.squaredNorm();
      if (grads) (*grads)[i].values = (2.0 * inv) * r;
    }
    out.mse = sum * inv;
    out.has_mse = true;
  }
  if (!batch.unlabeled.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.unlabeled.size());
    double sum = 0.0;
    Matrix s, back;
    for (int i : batch.unlabeled) {
      proj.forward(preds[i].values, s);
      s -= batch.samples[i]->sinogram.values;
      sum += s.squaredNorm();
      if (grads) {
        proj.back(s, back);
        (*grads)[i].values = (2.0 * inv * proj_weight) * back;
      }
    }
    out.proj = proj_weight * sum * inv;
    out.has_proj = true;
  }
  return out;
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "supervised" || name == "mse") return LossMode::Supervised;
  if (name == "semi" || name == "semi-supervised") return LossMode::SemiSupervised;
  throw ConfigError("unknown loss '" + name + "' (expected supervised or semi)");
}

std::string to_string(LossMode m) { return m == LossMode::Supervised ? "supervised" : "semi"; }

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (epochs < 1) out.push_back("training.epochs must be >= 1");
  if (max_steps < 0) out.push_back("training.max_steps must be >= 0");
  if (batch_size < 1) out.push_back("training.batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) out.push_back("training.learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    out.push_back("training.beta1/beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) out.push_back("training.epsilon must be > 0");
  if (!(proj_weight >= 0.0)) out.push_back("training.proj_weight must be >= 0");
  return out;
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Vector::Zero(static_cast<Eigen::Index>(size))), v_(Vector::Zero(static_cast<Eigen::Index>(size))) {}

void Adam::step(Vector& params, const Vector& grad) {
  if (grad.size() != params.size() || params.size() != m_.size()) throw InputError("Adam: size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < params.size(); ++i)
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
}

TrainResult train(MagicNetwork& net, const std::vector<Sample>& dataset, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_epoch) {
  const auto bad = config.violations();
  if (!bad.empty()) {
    std::string msg = bad.front();
    for (std::size_t i = 1; i < bad.size(); ++i) msg += "; " + bad[i];
    throw ConfigError(msg);
  }
  std::vector<const Sample*> pool;
  for (const auto& s : dataset)
    if (config.loss == LossMode::SemiSupervised || s.label) pool.push_back(&s);
  if (pool.empty())
    throw InputError(config.loss == LossMode::Supervised ? "train: supervised training needs labeled samples"
                                                         : "train: dataset is empty");

  std::mt19937_64 rng(config.seed);
  Adam opt(net.parameter_count(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
  Vector params = net.flatten();
  TrainResult result;
  std::vector<int> order(pool.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double mse_sum = 0.0, proj_sum = 0.0, total_sum = 0.0;
    int mse_n = 0, proj_n = 0, batches = 0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      if (config.max_steps > 0 && result.steps >= config.max_steps) break;
      std::vector<const Sample*> members;
      for (std::size_t k = at; k < std::min(order.size(), at + config.batch_size); ++k)
        members.push_back(pool[order[k]]);
      const Batch batch = Batch::from(members);

      std::vector<ForwardResult> fwd;
      std::vector<ImageGrid> preds;
      for (const Sample* s : batch.samples) {
        fwd.push_back(forward_pass(net, s->input, s->sinogram));
        preds.push_back(fwd.back().output);
      }
      std::vector<ImageGrid> loss_grads;
      const LossTerms terms = semi_loss(batch, preds, net.projector(), config.proj_weight, &loss_grads);
      if (!std::isfinite(terms.total())) {
        if (!config.divergence_checkpoint.empty()) net.save(config.divergence_checkpoint);
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(result.steps) + " (loss " + std::to_string(terms.total()) + ")");
      }
      if (result.steps == 0) result.initial_loss = terms.total();
      result.final_loss = terms.total();

      Vector grad = Vector::Zero(params.size());
      for (std::size_t i = 0; i < fwd.size(); ++i)
        grad += net.flatten_gradients(backward_pass(net, fwd[i].tape, loss_grads[i]));
      const double norm = grad.norm();
      if (!std::isfinite(norm)) {
        if (!config.divergence_checkpoint.empty()) net.save(config.divergence_checkpoint);
        throw DivergenceError("non-finite gradient at step " + std::to_string(result.steps));
      }
      if (config.grad_clip > 0.0 && norm > config.grad_clip) grad *= config.grad_clip / norm;
      opt.step(params, grad);
      net.assign(params);
      ++result.steps;

      if (terms.has_mse) {
        mse_sum += terms.mse;
        ++mse_n;
      }
      if (terms.has_proj) {
        proj_sum += terms.proj;
        ++proj_n;
      }
      total_sum += terms.total();
      ++batches;
    }
    if (batches == 0) break;
    LossRecord rec;
    rec.epoch = epoch;
    rec.step = result.steps;
    rec.mse_term = mse_n ? mse_sum / mse_n : 0.0;
    rec.proj_term = proj_n ? proj_sum / proj_n : 0.0;
    rec.total = total_sum / batches;
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void write_loss_curve_csv(const std::vector<LossRecord>& curve, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write loss curve " + path);
  os << "epoch,step,mse_term,proj_term,total\n" << std::setprecision(10);
  for (const auto& r : curve) os << r.epoch << ',' << r.step << ',' << r.mse_term << ',' << r.proj_term << ',' << r.total << '\n';
  if (!os) throw IoError("failed writing loss curve " + path);
}

}  // namespace magic
