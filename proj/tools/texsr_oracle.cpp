// Reference runs whose results are frozen into tests/oracle/pinned.txt.

#include <cstdio>

#include "scenarios.hpp"

using namespace texsr;

int main() {
  {
    const auto b = scenario::compare_baselines(scenario::render(scenario::reference_spec()),
                                               kInferenceDepth);
    std::printf("baseline.mva_psnr = %.6f\n", b.mva_psnr);
    std::printf("baseline.init_psnr = %.6f\n", b.init_psnr);
    std::printf("baseline.bicubic_psnr = %.6f\n", b.bicubic_psnr);
    std::printf("baseline.mva_on_bicubic_psnr = %.6f\n", b.mva_on_bicubic);
    std::printf("baseline.best_view = %zu\n", b.best_view);
  }
  {
    const auto gt = scenario::render(scenario::noise_free_spec());
    const auto p = assemble_problem(gt.views, gt.chains);
    const Raster out = scenario::solve_mva(p, kInferenceDepth);
    std::printf("recovery.psnr = %.6f\n", psnr(out, gt.texture.data(), p.initial.mask()));
  }
  {
    const auto r = scenario::training_smoke();
    std::printf("training.loss_before = %.6f\n", r.loss_before);
    std::printf("training.loss_after = %.6f\n", r.loss_after);
    std::printf("training.loss_reduction = %.6f\n", 1.0 - r.loss_after / r.loss_before);
    std::printf("training.val_before = %.6f\n", r.val_before);
    std::printf("training.val_after = %.6f\n", r.val_after);
  }
  return 0;
}
