#pragma once

#include <limits>

#include "memtrain/errors.hpp"
#include "memtrain/rng.hpp"

namespace memtrain {

// Statistical model of one b-RRAM cell. Conductance (uS) is the canonical
// state; currents are derived through the read voltage. Noise magnitudes are
// expressed in units of the separation between two adjacent programmable
// levels, matching how the hardware is characterized.
struct DeviceConfig {
    double i_min_ua = 1.0;   // current at v_read, low end of the window
    double i_max_ua = 7.0;   // current at v_read, high end of the window
    double v_read_v = 0.1;
    int n_levels = 16;
    double sigma_read = 0.3;  // read-noise std, in level separations
    double sigma_prog = 0.5;  // programming-error std, in level separations
    double verify_tol = 0.5;  // verify half-window, in level separations
    int max_trials = 2;       // Set-Reset verify cycles before giving up

    // Separation between adjacent current levels, in uA.
    double level_separation_ua() const { return (i_max_ua - i_min_ua) / (n_levels - 1); }

    double g_min_us() const { return i_min_ua / v_read_v; }
    double g_max_us() const { return i_max_ua / v_read_v; }

    // Level separation expressed as conductance (uS).
    double level_separation_us() const { return level_separation_ua() / v_read_v; }

    void validate() const {
        if (!(i_min_ua > 0.0)) throw ConfigError("device: i_min must be > 0");
        if (!(i_max_ua > i_min_ua)) throw ConfigError("device: i_max must exceed i_min");
        if (!(v_read_v > 0.0)) throw ConfigError("device: v_read must be > 0");
        if (n_levels < 2) throw ConfigError("device: n_levels must be >= 2");
        if (sigma_read < 0.0 || sigma_prog < 0.0 || verify_tol < 0.0)
            throw ConfigError("device: noise parameters must be >= 0");
        if (max_trials < 1) throw ConfigError("device: max_trials must be >= 1");
    }
};

struct DeviceState {
    double g_us = 0.0;
    // Target of the last write-and-verify pass; NaN before first programming.
    double last_target_us = std::numeric_limits<double>::quiet_NaN();
};

struct ProgramResult {
    double final_g_us = 0.0;
    int trials_used = 0;
    bool verified = false;
};

// Noisy compute-path read: g * v_read plus Gaussian read noise, floored at 0.
// The device state is never touched.
double read_current_ua(const DeviceState& dev, const DeviceConfig& cfg, Rng& rng);

// Write-and-verify programming. Each trial places the conductance at
// target + eps with eps ~ N(0, sigma_prog * level separation), reads back
// without noise and accepts when within the verify window. On exhaustion the
// last attempted conductance is kept and verified=false is reported; the
// device is never fine-tuned further. Placement is clamped to
// [0.5*g_min, 1.5*g_max] so programming cannot run away from the window.
// Throws TargetOutOfRange when the target lies outside [g_min, g_max].
ProgramResult program(DeviceState& dev, double target_g_us, const DeviceConfig& cfg, Rng& rng);

// Fresh device with conductance uniform in [init_lo/v_read, init_hi/v_read].
// Bounds are currents (uA) and must lie inside the device window.
DeviceState init_device(const DeviceConfig& cfg, double init_lo_ua, double init_hi_ua, Rng& rng);

} // namespace memtrain
