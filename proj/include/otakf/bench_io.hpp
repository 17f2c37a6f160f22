#pragma once

#include <iosfwd>
#include <string>

#include "json.hpp"
#include "otakf/bench.hpp"

namespace otakf::bench {

std::string tool_version();

nlohmann::json to_json(const SsmSpec& spec);
nlohmann::json to_json(const AdaptConfig& cfg);
nlohmann::json to_json(const DriftScenario& sc);
nlohmann::json to_json(const MethodResult& result);

/// Keys of the effective adaptation config that differ from the `otak` method's config.
nlohmann::json ablation_diff(Method method, const AdaptConfig& base);

/// One document per scenario: metadata, resolved configuration, per-run values, curves.
nlohmann::json scenario_json(const ScenarioResult& result, const nlohmann::json& run_config = {});

/// `method,level_db,run,mse_db`
void write_runs_csv(std::ostream& out, const SweepTable& table);
/// `method,level_db,t,mse_db`
void write_curves_csv(std::ostream& out, const SweepTable& table);

}  // namespace otakf::bench
