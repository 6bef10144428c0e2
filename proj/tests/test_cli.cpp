#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ivor/errors.hpp"

using nlohmann::json;

namespace {

std::string cli_path() {
    const char* env = std::getenv("IVOR_CLI");
    REQUIRE(env != nullptr);
    return env;
}

std::string run_cli(const std::string& args, int* exit_code) {
    std::string cmd = cli_path() + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, got);
    *exit_code = WEXITSTATUS(pclose(pipe));
    return out;
}

// Validator for the subset of JSON Schema the shipped schema uses:
// type, required, properties, items, enum, oneOf, $ref (to #/definitions),
// minItems/maxItems.
class SchemaValidator {
public:
    explicit SchemaValidator(json schema) : root_(std::move(schema)) {}

    bool validate(const json& value, const json& schema) const {
        if (schema.contains("$ref")) {
            const std::string& ref = schema["$ref"].get_ref<const std::string&>();
            const std::string prefix = "#/definitions/";
            REQUIRE(ref.rfind(prefix, 0) == 0);
            return validate(value, root_["definitions"][ref.substr(prefix.size())]);
        }
        if (schema.contains("oneOf")) {
            int matches = 0;
            for (const json& sub : schema["oneOf"])
                if (validate(value, sub)) ++matches;
            return matches >= 1;
        }
        if (schema.contains("type") && !type_matches(value, schema["type"])) return false;
        if (schema.contains("enum")) {
            bool any = false;
            for (const json& e : schema["enum"]) any = any || e == value;
            if (!any) return false;
        }
        if (value.is_object()) {
            if (schema.contains("required"))
                for (const json& key : schema["required"])
                    if (!value.contains(key.get<std::string>())) return false;
            if (schema.contains("properties"))
                for (auto it = schema["properties"].begin();
                     it != schema["properties"].end(); ++it)
                    if (value.contains(it.key()) &&
                        !validate(value[it.key()], it.value()))
                        return false;
        }
        if (value.is_array()) {
            if (schema.contains("minItems") &&
                value.size() < schema["minItems"].get<std::size_t>())
                return false;
            if (schema.contains("maxItems") &&
                value.size() > schema["maxItems"].get<std::size_t>())
                return false;
            if (schema.contains("items"))
                for (const json& item : value)
                    if (!validate(item, schema["items"])) return false;
        }
        return true;
    }

    bool validate(const json& value) const { return validate(value, root_); }

private:
    static bool single_type_matches(const json& value, const std::string& t) {
        if (t == "object") return value.is_object();
        if (t == "array") return value.is_array();
        if (t == "string") return value.is_string();
        if (t == "number") return value.is_number();
        if (t == "boolean") return value.is_boolean();
        if (t == "null") return value.is_null();
        return false;
    }
    static bool type_matches(const json& value, const json& t) {
        if (t.is_string()) return single_type_matches(value, t.get<std::string>());
        for (const json& one : t)
            if (single_type_matches(value, one.get<std::string>())) return true;
        return false;
    }

    json root_;
};

const SchemaValidator& schema() {
    static SchemaValidator validator = [] {
        std::ifstream in(std::string(IVOR_SOURCE_DIR) + "/docs/output-schema.json");
        REQUIRE(in.good());
        return SchemaValidator(json::parse(in));
    }();
    return validator;
}

}  // namespace

TEST_CASE("table-fit on the fixture reports the reference estimates") {
    int code = 0;
    std::string out =
        run_cli("table-fit --fixture brookhart --estimator logistic-smm", &code);
    CHECK(code == 0);
    json j = json::parse(out);
    CHECK(schema().validate(j));
    CHECK(j["result"]["exp_psi"].get<double>() ==
          doctest::Approx(0.081).epsilon(0.01));
    CHECK(j["result"]["exp_ci"][0].get<double>() ==
          doctest::Approx(0.0095).epsilon(0.01));
    CHECK(j["result"]["exp_ci"][1].get<double>() ==
          doctest::Approx(0.82).epsilon(0.01));

    out = run_cli("table-fit --fixture brookhart --estimator standard-iv", &code);
    CHECK(code == 0);
    j = json::parse(out);
    CHECK(schema().validate(j));
    CHECK(j["result"]["exp_psi"].get<double>() == doctest::Approx(0.26).epsilon(0.01));
}

TEST_CASE("shipped fixture data file matches the built-in counts") {
    std::ifstream in(std::string(IVOR_SOURCE_DIR) + "/data/brookhart.json");
    REQUIRE(in.good());
    json fixture = json::parse(in);
    int code = 0;
    json out = json::parse(run_cli("table-fit --fixture brookhart", &code));
    REQUIRE(code == 0);
    for (const json& cell : out["input"]["table"]) {
        int x = cell["x"].get<int>(), z = cell["z"].get<int>(),
            y = cell["y"].get<int>();
        CHECK(cell["n"].get<std::uint64_t>() ==
              fixture["counts"][x][z][y].get<std::uint64_t>());
    }
}

TEST_CASE("curve over the fixture crosses once") {
    int code = 0;
    std::string out = run_cli("curve --fixture brookhart --grid -6:2:0.05", &code);
    CHECK(code == 0);
    json j = json::parse(out);
    CHECK(schema().validate(j));
    const json& curve = j["curve"];
    CHECK(curve.size() == 161);
    int crossings = 0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        double prev = curve[i - 1]["lhs"].get<double>() -
                      curve[i - 1]["rhs"].get<double>();
        double cur = curve[i]["lhs"].get<double>() - curve[i]["rhs"].get<double>();
        if ((prev > 0) != (cur > 0)) ++crossings;
    }
    CHECK(crossings == 1);
}

TEST_CASE("simulate output validates and carries every cell") {
    int code = 0;
    std::string out = run_cli(
        "--seed 3 simulate --experiment a --ey 0.5 --psi 1 --reps 10 "
        "--estimators standard-iv,logistic-smm",
        &code);
    CHECK(code == 0);
    json j = json::parse(out);
    CHECK(schema().validate(j));
    CHECK(j["cells"].size() == 2);
    CHECK(j["config"]["seed"].get<std::uint64_t>() == 3);
}

TEST_CASE("fit ingests CSV files and reports drop counts") {
    std::string path = "cli_test_tmp.csv";
    {
        std::ofstream f(path);
        f << "y,x,z\n1,1,1\n0,0,0\n1,bad,1\n0,1,1\n1,0,0\n0,1,0\n1,1,1\n0,0,1\n";
    }
    int code = 0;
    std::string out =
        run_cli("fit --input " + path + " --estimator standard-iv", &code);
    std::remove(path.c_str());
    CHECK(code == 0);
    json j = json::parse(out);
    CHECK(schema().validate(j));
    CHECK(j["input"]["rows_used"].get<int>() == 7);
    CHECK(j["input"]["rows_dropped"].get<int>() == 1);
    CHECK(j["input"]["hash"].is_string());
}

TEST_CASE("errors surface as machine-readable objects with exit classes") {
    int code = 0;
    std::string out = run_cli("table-fit --fixture nosuch", &code);
    CHECK(code == 2);
    json j = json::parse(out);
    CHECK(schema().validate(j));
    CHECK(j["error"]["code"] == "InvalidArgument");

    // no-root counts surface the estimation exit class
    out = run_cli("table-fit --counts 3,1,8,5,10,4,30,2 --estimator logistic-smm",
                  &code);
    CHECK(code == 4);
    j = json::parse(out);
    CHECK(j["error"]["code"] == "NoRoot");
}

TEST_CASE("text format renders human tables") {
    int code = 0;
    std::string out = run_cli(
        "--format text --seed 5 simulate --experiment a --ey 0.5 --psi 1 --reps 5",
        &code);
    CHECK(code == 0);
    CHECK(out.find("estimator") != std::string::npos);
    CHECK(out.find("logistic-smm") != std::string::npos);

    out = run_cli("--format text table-fit --fixture brookhart", &code);
    CHECK(code == 0);
    CHECK(out.find("exp(psi)") != std::string::npos);
}

TEST_CASE("marginal estimator through the CLI carries the interval pair") {
    int code = 0;
    std::string out = run_cli(
        "table-fit --fixture brookhart --estimator marginal --contrast fixed:0,1",
        &code);
    CHECK(code == 0);
    json j = json::parse(out);
    CHECK(schema().validate(j));
    CHECK(j["result"]["marginal_or"].get<double>() ==
          doctest::Approx(0.083).epsilon(0.01));
    CHECK(j["result"].contains("exp_inversion_ci"));
}
