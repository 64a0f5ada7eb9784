// lamperti: run one experiment from a JSON config and write its table.
//
// exit status: 0 ok, 1 verification failed, 2 bad config or model,
// 3 file could not be read or written

#include <lamperti/experiment.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace lamperti;

namespace {

enum Exit { ok = 0, failed = 1, bad_config = 2, io = 3 };

int fail(int code, const std::string& msg)
{
    std::cerr << "lamperti: " << msg << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Renewal measures of Lamperti-type Markov chains"};
    std::string config_path, out_path, format;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<double> tolerance;
    app.add_option("-c,--config", config_path, "JSON experiment config")->required();
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--threads", threads, "worker threads (0: LAMPERTI_THREADS or all cores)");
    app.add_option("-o,--out", out_path, "output file (default: config output.path, else stdout)");
    app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--tolerance", tolerance, "override the pass tolerance");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int r = app.exit(e);
        return r == 0 ? 0 : int(bad_config);
    }

    json doc;
    {
        std::ifstream in(config_path);
        if (!in) return fail(io, "cannot read " + config_path);
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            return fail(bad_config, config_path + ": " + e.what());
        }
    }

    if (doc.is_object() && doc.contains("output")) {
        const auto& o = doc["output"];
        if (!o.is_object()) return fail(bad_config, "\"output\" must be an object");
        for (auto it = o.begin(); it != o.end(); ++it) {
            if (it.key() != "path" && it.key() != "format") return fail(bad_config, "unknown key \"output." + it.key() + "\"");
            if (!it.value().is_string()) return fail(bad_config, "\"output." + it.key() + "\" must be a string");
        }
        if (out_path.empty() && o.contains("path")) out_path = o["path"].get<std::string>();
        if (format.empty() && o.contains("format")) format = o["format"].get<std::string>();
    }
    if (format.empty()) format = out_path.size() >= 5 && out_path.substr(out_path.size() - 5) == ".json" ? "json" : "csv";
    if (format != "csv" && format != "json") return fail(bad_config, "output format must be csv or json");
    if (doc.is_object()) {
        if (seed) doc["seed"] = *seed;
        if (threads) doc["threads"] = *threads;
        if (tolerance) doc["tolerance"] = *tolerance;
    }

    Table t;
    try {
        auto cfg = resolve_config(doc);
        if (tolerance && !cfg.doc.contains("tolerance"))
            std::cerr << "lamperti: --tolerance has no effect on " << cfg.kind << "\n";
        t = run_experiment(cfg);
    } catch (const config_error& e) {
        return fail(bad_config, e.what());
    } catch (const model_error& e) {
        return fail(bad_config, e.what());
    } catch (const profile_error& e) {
        return fail(bad_config, e.what());
    } catch (const series_divergent& e) {
        return fail(failed, e.what());
    } catch (const diffusion_divergent& e) {
        return fail(failed, e.what());
    } catch (const certification_error& e) {
        return fail(failed, e.what());
    } catch (const tolerance_unreachable& e) {
        return fail(failed, e.what());
    } catch (const json::exception& e) {
        return fail(bad_config, e.what());
    } catch (const std::exception& e) {
        return fail(failed, e.what());
    }

    std::ostringstream buf;
    if (format == "json")
        write_json(t, buf);
    else
        write_csv(t, buf);
    if (out_path.empty()) {
        std::cout << buf.str();
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out || !(out << buf.str()) || !out.flush()) return fail(io, "cannot write " + out_path);
    }
    if (!t.pass()) return fail(failed, t.kind + ": verification failed, summary " + t.summary.dump());
    return ok;
}
