#pragma once

// JSON codecs for the domain types, kept out of the domain headers so only
// serialization-facing translation units pay for the json header.

#include "json.hpp"
#include "orchard/apps.hpp"
#include "orchard/resources.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::warehouse {

void to_json(nlohmann::json& j, const Project& p);
void from_json(const nlohmann::json& j, Project& p);
void to_json(nlohmann::json& j, const FileSpecEntry& e);
void from_json(const nlohmann::json& j, FileSpecEntry& e);
void to_json(nlohmann::json& j, const FeatureColumns& f);
void from_json(const nlohmann::json& j, FeatureColumns& f);
void to_json(nlohmann::json& j, const Datatype& d);
void from_json(const nlohmann::json& j, Datatype& d);
void to_json(nlohmann::json& j, const DataObject& o);
void from_json(const nlohmann::json& j, DataObject& o);
void to_json(nlohmann::json& j, const ValidationResult& v);

}  // namespace orchard::warehouse

namespace orchard::apps {

void to_json(nlohmann::json& j, const Slot& s);
void from_json(const nlohmann::json& j, Slot& s);
void to_json(nlohmann::json& j, const ConfigField& f);
void from_json(const nlohmann::json& j, ConfigField& f);
void to_json(nlohmann::json& j, const App& a);
void from_json(const nlohmann::json& j, App& a);
void to_json(nlohmann::json& j, const DockingResult& r);

}  // namespace orchard::apps

namespace orchard::resources {

void to_json(nlohmann::json& j, const SimProfile& p);
void from_json(const nlohmann::json& j, SimProfile& p);
void to_json(nlohmann::json& j, const Resource& r);
void from_json(const nlohmann::json& j, Resource& r);
void to_json(nlohmann::json& j, const ScoreBreakdown& b);

}  // namespace orchard::resources
