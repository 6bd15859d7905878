// Registers one synthetic pair with and without the heatmap and prints both traces.
#include <cstdio>

#include "ddr/ddr.hpp"

int main() {
  ddr::SynthSpec spec;
  spec.seed = 7;
  const ddr::SynthPair pair = ddr::synth_pair(spec);

  for (bool with_ddr : {false, true}) {
    ddr::DdrConfig cfg;
    cfg.ddr_enabled = with_ddr;
    cfg.outer_iters = 10;
    const ddr::RegistrationResult r = ddr::register_images(pair.fixed, pair.moving, cfg);
    std::printf("%s (%s)\n", with_ddr ? "ddr" : "baseline", ddr::status_name(r.status));
    for (const auto& rec : r.trace)
      std::printf("  %3d  C=%.6g  C_U=%.6g  t=%.4g\n", rec.outer_iter, rec.C, rec.C_U, rec.t);
    std::printf("  ssim=%.4f psnr=%.2f\n", r.final_metrics.ssim, r.final_metrics.psnr);
  }
}
