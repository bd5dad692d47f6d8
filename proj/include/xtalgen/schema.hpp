#pragma once

// A small JSON Schema (draft-07 subset) validator for the bundled schemas.
// Supported keywords: type, enum, properties, required, additionalProperties,
// items, minItems, maxItems, minimum, maximum, exclusiveMinimum,
// exclusiveMaximum, minLength and local "$ref": "#/definitions/<name>".

#include <json.hpp>

#include <string>
#include <vector>

namespace xtalgen {

// One message per violation, each prefixed with the JSON pointer of the offending value.
std::vector<std::string> schema_errors(const nlohmann::json& schema, const nlohmann::json& doc);

// Throws ConfigError listing every violation; `what` names the document.
void require_valid(const nlohmann::json& schema, const nlohmann::json& doc, const std::string& what);

const nlohmann::json& report_schema();
const nlohmann::json& run_config_schema();

}  // namespace xtalgen
