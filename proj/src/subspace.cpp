#include "semisub/subspace.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "semisub/io.hpp"

namespace semisub {

namespace {

using Json = nlohmann::json;

// Curve state packed into one vector for the optimizer:
// [control points (column-major, (k+1) x D) | theta (semi only) | log_sigma].
struct CurveLayout {
  int k;
  Eigen::Index D;
  int p;
  std::size_t d;
  bool naive;
  bool log_sigma;

  Eigen::Index cp_size() const { return (k + 1) * D; }
  Eigen::Index theta_off() const { return cp_size(); }
  Eigen::Index theta_size() const { return naive ? 0 : p; }
  Eigen::Index ls_off() const { return cp_size() + theta_size(); }
  Eigen::Index size() const { return ls_off() + (log_sigma ? 1 : 0); }

  Eigen::Map<const Matrix> cp(const Vector& z) const {
    return {z.data(), k + 1, D};
  }
  Eigen::Map<Matrix> cp(Vector& z) const { return {z.data(), k + 1, D}; }

  // Flat model parameters at curve point t.
  Vector params(const Vector& z, const Vector& bw) const {
    Vector out(static_cast<Eigen::Index>(p + d + (log_sigma ? 1 : 0)));
    const Vector point = cp(z).transpose() * bw;
    if (naive) {
      out.head(D) = point;
    } else {
      out.head(p) = z.segment(theta_off(), p);
      out.segment(p, D) = point;
    }
    if (log_sigma) out[out.size() - 1] = z[ls_off()];
    return out;
  }
};

CurveLayout make_layout(const SsrModel& model, int k, CurveScope scope) {
  const bool naive = scope == CurveScope::weights_and_theta;
  const auto D = static_cast<Eigen::Index>(model.d() + (naive ? model.p() : 0));
  return {k, D, model.p(), model.d(), naive, model.has_log_sigma()};
}

double mean_nll(const SsrModel& model, const Vector& params, const Dataset& d) {
  if (d.rows() == 0) return 0.0;
  return -log_likelihood(model, params, d.slice()) / static_cast<double>(d.rows());
}

std::string scope_name(CurveScope s) {
  return s == CurveScope::weights ? "semi" : "naive";
}

CurveScope scope_from_name(const std::string& s) {
  if (s == "semi") return CurveScope::weights;
  if (s == "naive") return CurveScope::weights_and_theta;
  throw std::invalid_argument("unknown subspace scope '" + s + "'");
}

Json vec_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vec_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void ControlPoints::validate() const {
  if (points.rows() < 2)
    throw std::invalid_argument("control points: need k+1 >= 2 points");
  if (points.cols() < 1) throw std::invalid_argument("control points: empty vectors");
  if (!points.allFinite())
    throw std::invalid_argument("control points: non-finite entries");
}

Vector bernstein_weights(int k, double t) {
  if (k < 0) throw std::invalid_argument("bernstein_weights: k must be >= 0");
  if (!(t >= 0.0 && t <= 1.0))
    throw std::out_of_range("curve position t must lie in [0, 1]");
  Vector w(k + 1);
  double binom = 1.0;
  for (int l = 0; l <= k; ++l) {
    w[l] = binom * std::pow(1.0 - t, k - l) * std::pow(t, l);
    binom = binom * (k - l) / (l + 1);
  }
  return w;
}

Vector bezier_eval(const ControlPoints& cp, double t) {
  cp.validate();
  return cp.points.transpose() * bernstein_weights(cp.k(), t);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("weight decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0))
    throw std::invalid_argument("invalid Adam hyperparameters");
  if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
  if (!(val_fraction >= 0 && val_fraction <= 0.5))
    throw std::invalid_argument("validation fraction must lie in [0, 0.5]");
  if (!(val_t >= 0 && val_t <= 1)) throw std::invalid_argument("val_t must lie in [0, 1]");
}

TrainResult train_subspace(const SsrModel& model, const Dataset& data, int k,
                           const TrainConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  if (k < 1) throw std::invalid_argument("subspace dimension k must be >= 1");
  cfg.validate();
  data.validate();
  if (data.p() != model.p()) throw DimensionError("dataset p", model.p(), data.p());
  if (data.q() != model.q()) throw DimensionError("dataset q", model.q(), data.q());

  Dataset train = data.subset(Split::train);
  Dataset val = data.subset(Split::val);
  if (train.rows() == 0) throw std::invalid_argument("no training rows");
  std::mt19937_64 rng(cfg.seed);
  if (val.rows() == 0 && cfg.val_fraction > 0 && train.rows() > 1) {
    std::vector<std::size_t> perm(train.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.val_fraction * train.rows())));
    std::vector<std::size_t> vrows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> trows(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    std::sort(vrows.begin(), vrows.end());
    std::sort(trows.begin(), trows.end());
    val = train.subset(vrows);
    train = train.subset(trows);
  }
  // Without held-out rows, selection falls back to the training loss.
  const Dataset& select_on = val.rows() > 0 ? val : train;
  validate_outcomes(model.head(), train.y);
  validate_outcomes(model.head(), select_on.y);

  const CurveLayout lay = make_layout(model, k, cfg.scope);
  Vector z = Vector::Zero(lay.size());
  {
    auto cp = lay.cp(z);
    for (int l = 0; l <= k; ++l) {
      const Vector init = model.init_params(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(l));
      if (lay.naive)
        cp.row(l) = init.head(lay.D).transpose();
      else
        cp.row(l) = init.segment(model.p(), lay.D).transpose();
    }
    if (!lay.naive && model.p() > 0)
      z.segment(lay.theta_off(), model.p()) =
          model.init_params(cfg.seed * 1000003ULL + 999983ULL).head(model.p());
  }

  TrainResult result;
  result.scope = cfg.scope;
  const Vector val_bw = bernstein_weights(k, cfg.val_t);
  Vector best = z;
  double best_val = mean_nll(model, lay.params(z, val_bw), select_on);
  int best_epoch = 0;

  Vector m = Vector::Zero(lay.size()), v = Vector::Zero(lay.size());
  long long step = 0;
  const auto n = train.rows();
  const std::size_t bs =
      cfg.batch_size <= 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector grad_flat, grad(lay.size());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    if (bs < n) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const Dataset batch_copy =
          bs < n ? train.subset(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                         order.begin() + static_cast<std::ptrdiff_t>(stop)))
                 : Dataset{};
      const Dataset& batch = bs < n ? batch_copy : train;
      const double t = unif(rng);
      const Vector bw = bernstein_weights(k, t);
      const Vector params = lay.params(z, bw);
      const double ll = log_likelihood_grad(model, params, batch.slice(), grad_flat);
      const double scale = 1.0 / static_cast<double>(batch.rows());
      const double loss = -ll * scale;
      if (!std::isfinite(loss) || !grad_flat.allFinite()) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << ", step " << step + 1;
        throw NumericError(os.str());
      }
      loss_sum += loss;
      ++batches;

      // d loss / d params, then chain to the curve variables.
      const Vector g = -scale * grad_flat;
      grad.setZero();
      const Vector g_curve =
          lay.naive ? Vector(g.head(lay.D)) : Vector(g.segment(model.p(), lay.D));
      lay.cp(grad) = bw * g_curve.transpose();
      if (!lay.naive && model.p() > 0)
        grad.segment(lay.theta_off(), model.p()) = g.head(model.p());
      if (lay.log_sigma) grad[lay.ls_off()] = g[g.size() - 1];
      if (cfg.weight_decay > 0) grad += cfg.weight_decay * z;

      ++step;
      m = cfg.beta1 * m + (1 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1 - cfg.beta2) * grad.cwiseAbs2();
      const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(step));
      z.array() -= cfg.learning_rate * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + cfg.eps);
    }

    const double val_nll = mean_nll(model, lay.params(z, val_bw), select_on);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    result.history.push_back({epoch, loss_sum / batches, val_nll, secs});
    if (!cfg.early_selection || val_nll < best_val || !std::isfinite(best_val)) {
      best_val = val_nll;
      best = z;
      best_epoch = epoch;
    }
  }

  result.control_points.points = lay.cp(best);
  result.best_epoch = best_epoch;
  if (lay.naive)
    result.theta_star = (result.control_points.points.transpose() * val_bw).head(model.p());
  else
    result.theta_star = best.segment(lay.theta_off(), model.p());
  if (lay.log_sigma) result.log_sigma_star = best[lay.ls_off()];
  const Vector best_params = lay.params(best, val_bw);
  result.train_nll = mean_nll(model, best_params, train);
  result.val_nll = mean_nll(model, best_params, select_on);
  return result;
}

Vector curve_params(const SsrModel& model, const TrainResult& trained, double t) {
  const int k = trained.control_points.k();
  const CurveLayout lay = make_layout(model, k, trained.scope);
  if (trained.control_points.dim() != lay.D)
    throw DimensionError("control point length", static_cast<std::size_t>(lay.D),
                         static_cast<std::size_t>(trained.control_points.dim()));
  Vector params(static_cast<Eigen::Index>(model.num_params()));
  const Vector point = bezier_eval(trained.control_points, t);
  if (lay.naive) {
    params.head(lay.D) = point;
  } else {
    params.head(model.p()) = trained.theta_star;
    params.segment(model.p(), lay.D) = point;
  }
  if (model.has_log_sigma()) params[params.size() - 1] = trained.log_sigma_star.value_or(0.0);
  return params;
}

double curve_loss(const SsrModel& model, const Dataset& data,
                  const TrainResult& trained, double t, Split split) {
  return mean_nll(model, curve_params(model, trained, t), data.subset(split));
}

BezierSubspace build_projection(const ControlPoints& cp) {
  cp.validate();
  const int k = cp.k();
  BezierSubspace sub;
  sub.control_points = cp;
  sub.mean = cp.points.colwise().mean().transpose();
  const Matrix centered = cp.points.rowwise() - sub.mean.transpose();  // (k+1) x D

  Eigen::JacobiSVD<Matrix> svd(centered.transpose(), Eigen::ComputeThinU);
  const Vector& s = svd.singularValues();
  const double smax = s.size() > 0 ? s[0] : 0.0;
  if (!(smax > 0.0) || smax <= 1e-14 * std::max(1.0, sub.mean.cwiseAbs().maxCoeff()))
    throw DegenerateSubspaceError("all control points are identical; subspace is degenerate");

  const auto D = cp.dim();
  sub.projection = Matrix::Zero(D, k);
  sub.singular_values = s.head(std::min<Eigen::Index>(k, s.size()));
  int rank = 0;
  for (int j = 0; j < k && j < s.size(); ++j) {
    if (s[j] <= 1e-10 * smax) break;
    Vector col = svd.matrixU().col(j);
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col[imax] < 0) col = -col;
    sub.projection.col(j) = col;
    ++rank;
  }
  sub.rank = rank;
  if (rank < k)
    warn("control points span only " + std::to_string(rank) + " of " +
         std::to_string(k) + " directions; trailing subspace columns are zero");
  return sub;
}

BezierSubspace build_projection(const TrainResult& trained) {
  BezierSubspace sub = build_projection(trained.control_points);
  sub.theta_star = trained.theta_star;
  sub.log_sigma_star = trained.log_sigma_star;
  sub.scope = trained.scope;
  return sub;
}

Vector phi_to_weights(const BezierSubspace& sub, const Vector& phi) {
  if (phi.size() != sub.k()) throw DimensionError("phi", sub.k(), phi.size());
  return sub.mean + sub.projection * phi;
}

Vector weights_to_phi(const BezierSubspace& sub, const Vector& w) {
  if (w.size() != sub.dim()) throw DimensionError("weights", sub.dim(), w.size());
  return sub.projection.transpose() * (w - sub.mean);
}

Json arch_to_json(const MlpArchitecture& arch) {
  Json hidden = Json::array();
  for (const auto& h : arch.hidden)
    hidden.push_back({{"width", h.width}, {"activation", to_string(h.activation)}});
  return {{"input_dim", arch.input_dim}, {"hidden", hidden}, {"output_dim", 1}};
}

MlpArchitecture arch_from_json(const Json& j) {
  MlpArchitecture a;
  a.input_dim = j.at("input_dim").get<int>();
  for (const auto& h : j.at("hidden"))
    a.hidden.push_back({h.at("width").get<int>(),
                        activation_from_string(h.at("activation").get<std::string>())});
  a.validate();
  return a;
}

Json head_to_json(const LikelihoodHead& head) {
  return {{"family", to_string(head.family)},
          {"dispersion", head.learnable_dispersion ? "learnable" : "fixed"},
          {"sigma", head.fixed_sigma}};
}

LikelihoodHead head_from_json(const Json& j) {
  LikelihoodHead h;
  h.family = family_from_string(j.at("family").get<std::string>());
  const auto disp = j.value("dispersion", std::string("learnable"));
  if (disp != "learnable" && disp != "fixed")
    throw std::invalid_argument("dispersion must be 'learnable' or 'fixed'");
  h.learnable_dispersion = disp == "learnable";
  h.fixed_sigma = j.value("sigma", 1.0);
  h.validate();
  return h;
}

Json checkpoint_to_json(const SubspaceCheckpoint& c) {
  const auto& s = c.subspace;
  Json j;
  j["format"] = "semisub-subspace/1";
  j["d"] = c.arch.num_weights();
  j["k"] = s.k();
  j["p"] = c.p;
  j["dim"] = s.dim();
  j["scope"] = scope_name(s.scope);
  j["mean"] = vec_json(s.mean);
  // Column-major: column j occupies entries [j*dim, (j+1)*dim).
  j["projection"] = std::vector<double>(s.projection.data(),
                                        s.projection.data() + s.projection.size());
  Json cps = Json::array();
  for (Eigen::Index r = 0; r < s.control_points.points.rows(); ++r)
    cps.push_back(vec_json(s.control_points.points.row(r).transpose()));
  j["control_points"] = cps;
  j["theta_star"] = vec_json(s.theta_star);
  j["log_sigma_star"] = s.log_sigma_star ? Json(*s.log_sigma_star) : Json(nullptr);
  j["singular_values"] = vec_json(s.singular_values);
  j["rank"] = s.rank;
  j["arch"] = arch_to_json(c.arch);
  j["head"] = head_to_json(c.head);
  j["seed"] = c.seed;
  j["train"] = {{"best_epoch", c.best_epoch}, {"train_nll", c.train_nll}, {"val_nll", c.val_nll}};
  return j;
}

SubspaceCheckpoint checkpoint_from_json(const Json& j) {
  if (j.value("format", std::string()) != "semisub-subspace/1")
    throw std::invalid_argument("not a subspace checkpoint (format mismatch)");
  SubspaceCheckpoint c;
  c.arch = arch_from_json(j.at("arch"));
  c.head = head_from_json(j.at("head"));
  c.p = j.at("p").get<int>();
  c.seed = j.value("seed", std::uint64_t{0});
  auto& s = c.subspace;
  s.scope = scope_from_name(j.at("scope").get<std::string>());
  s.mean = vec_from_json(j.at("mean"));
  const int k = j.at("k").get<int>();
  const Vector proj = vec_from_json(j.at("projection"));
  if (proj.size() != s.mean.size() * k)
    throw DimensionError("checkpoint projection", static_cast<std::size_t>(s.mean.size() * k),
                         static_cast<std::size_t>(proj.size()));
  s.projection = Eigen::Map<const Matrix>(proj.data(), s.mean.size(), k);
  const auto& cps = j.at("control_points");
  s.control_points.points.resize(static_cast<Eigen::Index>(cps.size()), s.mean.size());
  for (std::size_t r = 0; r < cps.size(); ++r)
    s.control_points.points.row(static_cast<Eigen::Index>(r)) = vec_from_json(cps[r]).transpose();
  s.theta_star = vec_from_json(j.at("theta_star"));
  if (!j.at("log_sigma_star").is_null()) s.log_sigma_star = j.at("log_sigma_star").get<double>();
  s.singular_values = vec_from_json(j.at("singular_values"));
  s.rank = j.at("rank").get<int>();
  const std::size_t expected_dim =
      c.arch.num_weights() + (s.scope == CurveScope::weights_and_theta ? c.p : 0);
  if (static_cast<std::size_t>(s.mean.size()) != expected_dim)
    throw DimensionError("checkpoint mean", expected_dim, static_cast<std::size_t>(s.mean.size()));
  if (const auto& t = j.at("train"); t.is_object()) {
    c.best_epoch = t.value("best_epoch", 0);
    c.train_nll = t.value("train_nll", 0.0);
    c.val_nll = t.value("val_nll", 0.0);
  }
  return c;
}

void save_checkpoint(const SubspaceCheckpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_to_json(ckpt).dump(1) + "\n");
}

SubspaceCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(Json::parse(read_text_file(path)));
}

}  // namespace semisub
