#pragma once

#include "apo/config.hpp"

namespace apo {

// One function per CLI command. Each writes its artifacts and run.json under cfg.out.
void run_gen_data(const RunConfig& cfg);
void run_pretrain(const RunConfig& cfg);
void run_align(const RunConfig& cfg);
void run_sample(const RunConfig& cfg);
void run_localize(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
void run_inspect_schedule(const RunConfig& cfg);
void run_beta_sweep(const RunConfig& cfg);

// Dispatch by command name; unknown names raise ConfigError.
void run_command(const RunConfig& cfg);

}  // namespace apo
