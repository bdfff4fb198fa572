// SPDX-License-Identifier: Apache-2.0
#include "exsup/loss.hpp"

#include <stdexcept>
#include <string>

namespace exsup {

std::string_view to_string(SupervisionVariant v) {
  switch (v) {
    case SupervisionVariant::kNone: return "none";
    case SupervisionVariant::kGradia: return "gradia";
    case SupervisionVariant::kHaics: return "haics";
    case SupervisionVariant::kResG: return "res-g";
    case SupervisionVariant::kResL: return "res-l";
  }
  return "?";
}

SupervisionVariant variant_from_string(std::string_view s) {
  if (s == "none") return SupervisionVariant::kNone;
  if (s == "gradia") return SupervisionVariant::kGradia;
  if (s == "haics") return SupervisionVariant::kHaics;
  if (s == "res-g") return SupervisionVariant::kResG;
  if (s == "res-l") return SupervisionVariant::kResL;
  throw std::invalid_argument("unknown supervision variant '" + std::string(s) +
                              "' (expected none|gradia|haics|res-g|res-l)");
}

void RobustLossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 2.0)) {
    throw std::invalid_argument("loss: alpha must lie in [0,2], the per-pixel mismatch range");
  }
  if (!(gamma > 0.0)) throw std::invalid_argument("loss: gamma must be positive");
  if (!(lambda_exp >= 0.0)) throw std::invalid_argument("loss: lambda_exp must be >= 0");
}

namespace {

void check_batch(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks,
                 const char* op) {
  const Eigen::Index n = maps.full.dim(0);
  if (static_cast<Eigen::Index>(masks.size()) != n) {
    throw std::invalid_argument(std::string(op) + ": one mask per sample required");
  }
  for (const AnnotationMask* m : masks) {
    if (m->positive.rows() != maps.full.dim(2) || m->positive.cols() != maps.full.dim(3)) {
      throw std::invalid_argument(std::string(op) + ": mask size does not match the map");
    }
  }
}

// per-pixel weights 1/labeled_count for each sample's labeled pixels,
// evaluated at full or block-any reduced resolution
Tensor labeled_gate(const std::vector<const AnnotationMask*>& masks, Eigen::Index factor) {
  const Eigen::Index n = static_cast<Eigen::Index>(masks.size());
  const Eigen::Index h = masks[0]->positive.rows() / factor;
  const Eigen::Index w = masks[0]->positive.cols() / factor;
  Array data = Array::Zero(n * h * w);
  for (Eigen::Index i = 0; i < n; ++i) {
    const AnnotationMask& m = *masks[static_cast<std::size_t>(i)];
    BinaryMask labeled = (m.positive != 0 || m.negative != 0).cast<std::uint8_t>();
    if (factor > 1) labeled = downsample_any(labeled, factor);
    const auto count = (labeled != 0).count();
    if (count == 0) continue;
    const Scalar wgt = 1.0 / static_cast<Scalar>(count);
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x)
        if (labeled(y, x) != 0) data[(i * h + y) * w + x] = wgt;
  }
  return Tensor({n, 1, h, w}, std::move(data));
}

// weighted per-pixel values -> per-sample sums [n,1]
Tensor per_sample_sum(const Tensor& weighted) {
  const Eigen::Index n = weighted.dim(0);
  const Eigen::Index hw = weighted.size() / n;
  return matmul(reshape(weighted, {n, hw}), Tensor::constant({hw, 1}, 1.0));
}

}  // namespace

Tensor res_loss(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks,
                std::span<const double> thresholds, const Tensor& imputed,
                const RobustLossConfig& cfg) {
  cfg.validate();
  check_batch(maps, masks, "res_loss");
  const Eigen::Index n = maps.full.dim(0), fh = maps.full.dim(2), fw = maps.full.dim(3);
  if (thresholds.size() != 1 && static_cast<Eigen::Index>(thresholds.size()) != n) {
    throw std::invalid_argument("res_loss: thresholds must be shared or one per sample");
  }

  // hinge, always on the full-resolution map
  Array a_data(n * fh * fw);
  Array h_data = Array::Zero(n * fh * fw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = thresholds[thresholds.size() == 1 ? 0 : static_cast<std::size_t>(i)];
    a_data.segment(i * fh * fw, fh * fw).setConstant(a);
    const AnnotationMask& m = *masks[static_cast<std::size_t>(i)];
    for (Eigen::Index y = 0; y < fh; ++y) {
      for (Eigen::Index x = 0; x < fw; ++x) {
        if (m.positive(y, x) != 0) h_data[(i * fh + y) * fw + x] = 1.0;
        else if (m.negative(y, x) != 0) h_data[(i * fh + y) * fw + x] = -1.0;
      }
    }
  }
  const Tensor a_t({n, 1, fh, fw}, std::move(a_data));
  const Tensor h_t({n, 1, fh, fw}, std::move(h_data));
  const Tensor gate_full = labeled_gate(masks, 1);
  Tensor mism = abs(sub(tanh(mul_scalar(sub(maps.full, a_t), cfg.gamma)), h_t));
  Tensor hinge = relu(add_scalar(per_sample_sum(mul(mism, gate_full)), -cfg.alpha));

  // distance, at whichever resolution the imputed target was produced at
  if (imputed.rank() != 4 || imputed.dim(0) != n || imputed.dim(1) != 1) {
    throw std::invalid_argument("res_loss: imputed target must be [N,1,h,w], got " +
                                dims_to_string(imputed.shape()));
  }
  const Tensor* mref = nullptr;
  Eigen::Index factor = 1;
  if (imputed.dim(2) == maps.native.dim(2) && imputed.dim(3) == maps.native.dim(3)) {
    mref = &maps.native;
    if (fh % imputed.dim(2) != 0 || fw % imputed.dim(3) != 0 ||
        fh / imputed.dim(2) != fw / imputed.dim(3)) {
      throw std::invalid_argument("res_loss: native resolution does not tile the mask grid");
    }
    factor = fh / imputed.dim(2);
  } else if (imputed.dim(2) == fh && imputed.dim(3) == fw) {
    mref = &maps.full;
  } else {
    throw std::invalid_argument("res_loss: imputed resolution " + dims_to_string(imputed.shape()) +
                                " matches neither map resolution");
  }
  Tensor dist = per_sample_sum(mul(abs(sub(*mref, imputed)), labeled_gate(masks, factor)));

  return mean(add(hinge, dist));
}

Tensor gradia_loss(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks) {
  check_batch(maps, masks, "gradia_loss");
  const Eigen::Index n = maps.full.dim(0), fh = maps.full.dim(2), fw = maps.full.dim(3);
  Array f_data(n * fh * fw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const AnnotationMask& m = *masks[static_cast<std::size_t>(i)];
    for (Eigen::Index y = 0; y < fh; ++y)
      for (Eigen::Index x = 0; x < fw; ++x)
        f_data[(i * fh + y) * fw + x] = m.positive(y, x);
  }
  return mean(abs(sub(maps.full, Tensor({n, 1, fh, fw}, std::move(f_data)))));
}

Tensor haics_loss(const SaliencyMaps& maps, const std::vector<const AnnotationMask*>& masks) {
  check_batch(maps, masks, "haics_loss");
  const Eigen::Index n = maps.full.dim(0), fh = maps.full.dim(2), fw = maps.full.dim(3);
  Array t_data = Array::Zero(n * fh * fw);
  Array u_data = Array::Zero(n * fh * fw);
  for (Eigen::Index i = 0; i < n; ++i) {
    const AnnotationMask& m = *masks[static_cast<std::size_t>(i)];
    for (Eigen::Index y = 0; y < fh; ++y) {
      for (Eigen::Index x = 0; x < fw; ++x) {
        if (m.positive(y, x) != 0) t_data[(i * fh + y) * fw + x] = 1.0;
        else if (m.negative(y, x) != 0) u_data[(i * fh + y) * fw + x] = 1.0;
      }
    }
  }
  const Dims shape{n, 1, fh, fw};
  const Tensor t_t(shape, std::move(t_data));
  const Tensor u_t(shape, std::move(u_data));
  constexpr Scalar kEps = 1e-7;
  Tensor m = clamp(maps.full, kEps, 1.0 - kEps);
  Tensor bce = neg(add(mul(t_t, log(m)), mul(u_t, log(add_scalar(neg(m), 1.0)))));
  return mean(per_sample_sum(mul(bce, labeled_gate(masks, 1))));
}

Tensor total_objective(const Tensor& pred_loss, const Tensor& exp_loss, double lambda_exp) {
  return add(pred_loss, mul_scalar(exp_loss, lambda_exp));
}

}  // namespace exsup
