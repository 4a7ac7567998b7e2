#pragma once

#include <string>

#include "labplane/control_plane.hpp"
#include "labplane/error.hpp"

namespace labplane::testing {

inline Template gpu_template(std::string name = "gpu", std::string image = "pytorch-2x-cu124") {
  return Template{std::move(name), std::move(image), ResourceSpec{4000, 16 * kGiB, 1}, {"/home"}, {}, 0};
}

inline Template cpu_template(std::string name = "cpu", std::string image = "pytorch-2x-cu121") {
  return Template{std::move(name), std::move(image), ResourceSpec{2000, 4 * kGiB, 0}, {"/home"}, {}, 0};
}

/// Default image matrix, `gpu` GPU nodes (gpu-1..), `cpu` CPU nodes (cpu-1..),
/// and the "gpu" and "cpu" templates.
inline ControlPlane make_plane(int gpu, int cpu = 0, ControlConfig config = {}) {
  ControlPlane cp(std::move(config));
  for (const auto& image : default_image_matrix()) cp.register_image(image);
  for (int i = 1; i <= gpu; ++i) cp.register_node(make_node("gpu-" + std::to_string(i), 1));
  for (int i = 1; i <= cpu; ++i) cp.register_node(make_node("cpu-" + std::to_string(i), 0));
  cp.save_template(gpu_template());
  cp.save_template(cpu_template());
  return cp;
}

inline const Actor kAdmin = Actor::administrator();

template <typename F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::logic_error("expected an Error");
}

}  // namespace labplane::testing
