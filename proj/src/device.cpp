#include "memtrain/device.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace memtrain {

double read_current_ua(const DeviceState& dev, const DeviceConfig& cfg, Rng& rng) {
    double i = dev.g_us * cfg.v_read_v;
    if (cfg.sigma_read > 0.0) i += rng.normal(0.0, cfg.sigma_read * cfg.level_separation_ua());
    return std::max(i, 0.0);
}

ProgramResult program(DeviceState& dev, double target_g_us, const DeviceConfig& cfg, Rng& rng) {
    const double g_min = cfg.g_min_us();
    const double g_max = cfg.g_max_us();
    if (target_g_us < g_min || target_g_us > g_max) {
        throw TargetOutOfRange("program: target " + std::to_string(target_g_us) +
                               " uS outside [" + std::to_string(g_min) + ", " +
                               std::to_string(g_max) + "] uS");
    }

    const double sigma_g = cfg.sigma_prog * cfg.level_separation_us();
    const double window_g = cfg.verify_tol * cfg.level_separation_us();

    ProgramResult res;
    for (int trial = 0; trial < cfg.max_trials; ++trial) {
        double g = target_g_us;
        if (sigma_g > 0.0) g += rng.normal(0.0, sigma_g);
        g = std::clamp(g, 0.5 * g_min, 1.5 * g_max);
        dev.g_us = g;
        res.trials_used = trial + 1;
        // Verify readback is noiseless; read noise belongs to the compute path.
        if (std::abs(g - target_g_us) <= window_g) {
            res.verified = true;
            break;
        }
    }
    dev.last_target_us = target_g_us;
    res.final_g_us = dev.g_us;
    return res;
}

DeviceState init_device(const DeviceConfig& cfg, double init_lo_ua, double init_hi_ua, Rng& rng) {
    const double lo = init_lo_ua / cfg.v_read_v;
    const double hi = init_hi_ua / cfg.v_read_v;
    if (!(lo >= cfg.g_min_us() && lo <= hi && hi <= cfg.g_max_us())) {
        throw RangeError("init_device: init range [" + std::to_string(init_lo_ua) + ", " +
                         std::to_string(init_hi_ua) + "] uA outside device window");
    }
    DeviceState dev;
    dev.g_us = (lo == hi) ? lo : rng.uniform(lo, hi);
    return dev;
}

} // namespace memtrain
