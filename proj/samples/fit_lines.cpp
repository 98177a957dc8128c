// Fits a synthetic four-line scene with sequential RANSAC and with
// uniform conditional sampling, and prints the instance-level F1 of each.

#include <cstdio>

#include "consac/consac.hpp"

int main() {
  using namespace consac;
  const Scene scene = generate_line_scene(SynthLineConfig{}, 7);
  const auto segments = gt_line_segments(*scene.gt_models, scene.observations, *scene.gt_labels);

  for (Method method : {Method::sequential, Method::uniform_removal}) {
    FitOptions opt;
    opt.method = method;
    opt.sampler = SamplerConfig::defaults(ModelKind::line);
    opt.refine = RefineConfig::defaults(ModelKind::line);
    opt.sampler.seed = 1;
    const FitResult r = fit_scene(scene, opt, nullptr);
    const auto models = r.selected();
    std::printf("%-16s kept %zu of %zu instances, F1 %.3f\n", std::string(to_string(method)).c_str(), models.size(),
                r.models.size(), f1_segments(models, segments));
  }
}
