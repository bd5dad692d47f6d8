#include "xtalgen/schema.hpp"

#include "xtalgen/error.hpp"
#include "schemas_embedded.hpp"

#include <cmath>

namespace xtalgen {

using nlohmann::json;

namespace {

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer") {
    if (v.is_number_integer()) return true;
    return v.is_number_float() && std::floor(v.get<double>()) == v.get<double>();
  }
  throw ConfigError("schema uses unknown type '" + t + "'");
}

std::string escape_pointer(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

class Validator {
 public:
  explicit Validator(const json& root) : root_(root) {}

  void check(const json& s, const json& v, const std::string& at) {
    if (s.contains("$ref")) {
      check(resolve(s.at("$ref").get<std::string>()), v, at);
      return;
    }
    if (s.contains("type")) {
      const json& t = s.at("type");
      bool ok = false;
      if (t.is_string()) ok = has_type(v, t.get<std::string>());
      else
        for (const auto& alt : t) ok = ok || has_type(v, alt.get<std::string>());
      if (!ok) {
        fail(at, "expected type " + t.dump() + ", got " + v.type_name());
        return;
      }
    }
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s.at("enum")) found = found || e == v;
      if (!found) fail(at, "value " + v.dump() + " is not one of " + s.at("enum").dump());
    }
    if (v.is_number()) numeric(s, v.get<double>(), at);
    if (v.is_string() && s.contains("minLength") && v.get<std::string>().size() < s.at("minLength").get<std::size_t>())
      fail(at, "string is shorter than " + s.at("minLength").dump());
    if (v.is_object()) object(s, v, at);
    if (v.is_array()) array(s, v, at);
  }

  std::vector<std::string> errors;

 private:
  const json& resolve(const std::string& ref) {
    const std::string prefix = "#/definitions/";
    if (ref.rfind(prefix, 0) != 0) throw ConfigError("unsupported schema reference '" + ref + "'");
    const std::string name = ref.substr(prefix.size());
    if (!root_.contains("definitions") || !root_.at("definitions").contains(name))
      throw ConfigError("unresolved schema reference '" + ref + "'");
    return root_.at("definitions").at(name);
  }

  void numeric(const json& s, double x, const std::string& at) {
    if (s.contains("minimum") && x < s.at("minimum").get<double>()) fail(at, "below minimum " + s.at("minimum").dump());
    if (s.contains("maximum") && x > s.at("maximum").get<double>()) fail(at, "above maximum " + s.at("maximum").dump());
    if (s.contains("exclusiveMinimum") && !(x > s.at("exclusiveMinimum").get<double>()))
      fail(at, "must exceed " + s.at("exclusiveMinimum").dump());
    if (s.contains("exclusiveMaximum") && !(x < s.at("exclusiveMaximum").get<double>()))
      fail(at, "must be below " + s.at("exclusiveMaximum").dump());
  }

  void object(const json& s, const json& v, const std::string& at) {
    if (s.contains("required"))
      for (const auto& k : s.at("required"))
        if (!v.contains(k.get<std::string>())) fail(at, "missing required key '" + k.get<std::string>() + "'");
    const json* props = s.contains("properties") ? &s.at("properties") : nullptr;
    for (const auto& [key, val] : v.items()) {
      const std::string child = at + "/" + escape_pointer(key);
      if (props && props->contains(key)) {
        check(props->at(key), val, child);
      } else if (s.contains("additionalProperties")) {
        const json& extra = s.at("additionalProperties");
        if (extra.is_boolean()) {
          if (!extra.get<bool>()) fail(at, "unknown key '" + key + "'");
        } else {
          check(extra, val, child);
        }
      }
    }
  }

  void array(const json& s, const json& v, const std::string& at) {
    if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>())
      fail(at, "fewer than " + s.at("minItems").dump() + " items");
    if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>())
      fail(at, "more than " + s.at("maxItems").dump() + " items");
    if (s.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i) check(s.at("items"), v[i], at + "/" + std::to_string(i));
  }

  void fail(const std::string& at, const std::string& msg) { errors.push_back((at.empty() ? "/" : at) + ": " + msg); }

  const json& root_;
};

}  // namespace

std::vector<std::string> schema_errors(const json& schema, const json& doc) {
  Validator v(schema);
  v.check(schema, doc, "");
  return v.errors;
}

void require_valid(const json& schema, const json& doc, const std::string& what) {
  const auto errs = schema_errors(schema, doc);
  if (errs.empty()) return;
  std::string msg = what + " failed schema validation:";
  for (const auto& e : errs) msg += "\n  " + e;
  throw ConfigError(msg);
}

const json& report_schema() {
  static const json s = json::parse(embedded::kReportSchema);
  return s;
}

const json& run_config_schema() {
  static const json s = json::parse(embedded::kRunConfigSchema);
  return s;
}

}  // namespace xtalgen
