#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "animlab/tensor.hpp"
#include "animlab/unet.hpp"

namespace animlab {

// Adam with bias correction. Only parameters marked trainable move; moment
// buffers are keyed by parameter name so the update is independent of store
// order and of parameters that join or leave the trainable set.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t steps_taken = 0;
  std::unordered_map<std::string, Tensor> m1, m2;

  explicit Adam(double lr_ = 1e-4) : lr(lr_) { ANIMLAB_REQUIRE(lr_ > 0.0, "lr must be positive, got ", lr_); }

  void step(ParamStore& params) {
    ++steps_taken;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_taken));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_taken));
    for (auto& [name, v] : params.entries) {
      if (!v.requires_grad()) continue;
      Tensor& m = moment(m1, name, v.shape());
      Tensor& s = moment(m2, name, v.shape());
      Tensor& val = v.mutable_value();
      const bool has_g = v.has_grad();
      for (int64_t i = 0; i < val.numel(); ++i) {
        double g = has_g ? v.grad()[i] : 0.0;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        s[i] = beta2 * s[i] + (1.0 - beta2) * g * g;
        val[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + eps);
      }
    }
  }

 private:
  static Tensor& moment(std::unordered_map<std::string, Tensor>& buf, const std::string& name,
                        const Shape& shape) {
    auto it = buf.find(name);
    if (it == buf.end()) it = buf.emplace(name, Tensor(shape)).first;
    ANIMLAB_REQUIRE(it->second.shape() == shape, "moment shape drifted for ", name);
    return it->second;
  }
};

}  // namespace animlab
