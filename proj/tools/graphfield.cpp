#include "graphfield/assembly.hpp"
#include "graphfield/expression.hpp"
#include "graphfield/field.hpp"
#include "graphfield/harness.hpp"
#include "graphfield/inference.hpp"
#include "graphfield/io.hpp"
#include "graphfield/oracle.hpp"
#include "graphfield/rational.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <gsl/gsl_version.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifndef GRAPHFIELD_VERSION
#define GRAPHFIELD_VERSION "0.0.0"
#endif

using namespace graphfield;
using nlohmann::json;

namespace {

// Input problems (files, schemas, values) exit with 3; numerical failures with 4.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Run {
    std::string subcommand;
    std::vector<std::string> argv;
    std::string config;
    int threads = 1;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;
    json extra = json::object();
};

Run g_run;

std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || *end != '\0') throw InputError(std::string(what) + ": not a number list: '" + text + "'");
        out.push_back(v);
    }
    if (out.empty()) throw InputError(std::string(what) + ": empty list");
    return out;
}

// "a:step:b" (inclusive) or a comma list.
std::vector<double> parse_range(const std::string& text, const char* what) {
    if (text.find(':') == std::string::npos) return parse_list(text, what);
    std::string t = text;
    for (char& c : t)
        if (c == ':') c = ',';
    const auto v = parse_list(t, what);
    if (v.size() != 3 || !(v[1] > 0.0) || v[2] < v[0]) throw InputError(std::string(what) + ": expected a:step:b");
    std::vector<double> out;
    const int n = static_cast<int>(std::floor((v[2] - v[0]) / v[1] + 1e-9));
    for (int i = 0; i <= n; ++i) out.push_back(v[0] + i * v[1]);
    return out;
}

GraphPoint parse_point(const MetricGraph& g, const std::string& text) {
    const auto v = parse_list(text, "--point");
    if (v.size() != 2) throw InputError("--point expects edge_id,t");
    GraphPoint p{g.edge_index(static_cast<int>(v[0])), v[1]};
    g.check_point(p);
    return p;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << text;
    g_run.outputs.push_back(path);
}

std::string csv(const std::vector<std::string>& header, const Eigen::MatrixXd& rows) {
    std::ostringstream out;
    write_csv(out, header, rows);
    return out.str();
}

// Manifest next to every output: enough to rerun the command with --config.
void write_manifests() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - g_run.start).count();
    json m;
    m["tool"] = "graphfield";
    m["version"] = GRAPHFIELD_VERSION;
    m["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"gsl", GSL_VERSION}};
    m["subcommand"] = g_run.subcommand;
    m["argv"] = g_run.argv;
    m["config"] = g_run.config;
    m["threads"] = g_run.threads;
    m["seconds"] = seconds;
    m["outputs"] = g_run.outputs;
    m["details"] = g_run.extra;
    for (const auto& path : g_run.outputs) {
        std::ofstream out(path + ".manifest.json");
        if (!out) throw InputError("cannot write " + path + ".manifest.json");
        out << m.dump(2) << '\n';
    }
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j, const char* what) {
    if (!j.is_array()) throw InputError(std::string("model spec: ") + what + " must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw InputError(std::string("model spec: ") + what + " must hold numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

// Options shared by the field subcommands.
struct FieldOptions {
    std::string graph;
    double h = 0.05;
    double alpha = 1.5;
    std::string kappa = "1";
    std::string tau = "1";
    int m = 0;  // 0: calibrate
    double c = 1.0;
};

void add_field_options(CLI::App* app, FieldOptions& o, bool with_tau = true) {
    app->add_option("graph", o.graph, "graph JSON file or builtin (interval:L, circle:L, tadpole, star:k, lattice:RxC)")
        ->required();
    app->add_option("--h", o.h, "target mesh width")->check(CLI::PositiveNumber);
    app->add_option("--alpha", o.alpha, "smoothness alpha in (1/2, 3]");
    app->add_option("--kappa-expr", o.kappa, "kappa as an expression in x, y, edge, t, len");
    if (with_tau) app->add_option("--tau-expr", o.tau, "tau as an expression in x, y, edge, t, len");
    app->add_option("--m", o.m, "rational order (0: calibrate from h)")->check(CLI::NonNegativeNumber);
    app->add_option("--c", o.c, "calibration constant for the rational order")->check(CLI::PositiveNumber);
}

std::optional<int> order_for(double alpha, double h, int m, double c) {
    if (m > 0) return m;
    if (fractional_part(alpha) == 0.0) return std::nullopt;
    return std::min(calibrate_order(alpha, std::min(h, 0.999), c), kMaxRationalOrder);
}

std::shared_ptr<const Mesh> mesh_for(const std::string& graph, double h) {
    MetricGraph g;
    try {
        g = resolve_graph(graph);
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
    return std::make_shared<const Mesh>(build_mesh(g, h));
}

FieldModel field_from(const FieldOptions& o, std::shared_ptr<const Mesh> mesh) {
    const MetricGraph& g = mesh->graph();
    const Diagonal kappa = mesh->sample(make_edge_function(Expression(o.kappa), g));
    const Diagonal tau = mesh->sample(make_edge_function(Expression(o.tau), g));
    return FieldModel(mesh, o.alpha, kappa, tau, order_for(o.alpha, mesh->h(), o.m, o.c));
}

Eigen::MatrixXd node_table(const Mesh& mesh) {
    Eigen::MatrixXd rows(mesh.num_nodes(), 3);
    for (int i = 0; i < mesh.num_nodes(); ++i) {
        const GraphPoint& p = mesh.node_point(i);
        rows.row(i) << i, mesh.graph().edge(p.edge).id, p.t;
    }
    return rows;
}

// ---------------------------------------------------------------- model spec

struct ModelSpec {
    ModelTemplate tmpl;
    FitParameters start;
    std::optional<Eigen::VectorXd> beta;
};

// {alpha: number | "estimate", m?: int, kappa: {intercept, slopes, covariates},
//  tau: {...}, sigma_e, variance_stationary, beta?}. Covariates are expressions.
ModelSpec read_model_spec(const std::string& path, std::shared_ptr<const Mesh> mesh, double c) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw InputError("model spec " + path + ": " + e.what());
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
    if (!j.is_object()) throw InputError("model spec: top level must be an object");
    ModelSpec s;
    s.tmpl.mesh = mesh;
    s.tmpl.variance_stationary = j.value("variance_stationary", false);
    if (!j.contains("alpha")) throw InputError("model spec: missing field 'alpha'");
    if (j["alpha"].is_string()) {
        if (j["alpha"] != "estimate") throw InputError("model spec: field 'alpha' must be a number or \"estimate\"");
        s.start.alpha = j.value("alpha_start", 1.5);
    } else if (j["alpha"].is_number()) {
        s.start.alpha = j["alpha"].get<double>();
        s.tmpl.alpha = s.start.alpha;
    } else {
        throw InputError("model spec: field 'alpha' must be a number or \"estimate\"");
    }
    if (j.contains("m")) {
        if (!j["m"].is_number_integer()) throw InputError("model spec: field 'm' must be an integer");
        s.tmpl.m = j["m"].get<int>();
    } else if (s.tmpl.alpha && c != 1.0) {
        s.tmpl.m = order_for(*s.tmpl.alpha, mesh->h(), 0, c);
    }
    if (!j.contains("sigma_e") || !j["sigma_e"].is_number())
        throw InputError("model spec: field 'sigma_e' must be a number");
    s.start.sigma_e = j["sigma_e"].get<double>();
    if (!(s.start.sigma_e > 0.0)) throw InputError("model spec: field 'sigma_e' must be positive");

    auto regression = [&](const char* key, Eigen::MatrixXd& G, Eigen::VectorXd& theta, bool intercept_only) {
        if (!j.contains(key) || !j[key].is_object()) throw InputError(std::string("model spec: missing object '") + key + "'");
        const json& r = j[key];
        if (!r.contains("intercept") || !r["intercept"].is_number())
            throw InputError(std::string("model spec: field '") + key + ".intercept' must be a number");
        std::vector<std::string> covs;
        if (r.contains("covariates")) {
            if (!r["covariates"].is_array()) throw InputError(std::string("model spec: field '") + key + ".covariates' must be an array");
            for (const auto& e : r["covariates"]) {
                if (!e.is_string()) throw InputError(std::string("model spec: field '") + key + ".covariates' must hold expressions");
                covs.push_back(e.get<std::string>());
            }
        }
        if (intercept_only && !covs.empty())
            throw InputError(std::string("model spec: '") + key + "' takes no covariates for a variance-stationary model");
        Eigen::VectorXd slopes = r.contains("slopes") ? json_vec(r["slopes"], "slopes") : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(covs.size()));
        if (slopes.size() != static_cast<Eigen::Index>(covs.size()))
            throw InputError(std::string("model spec: field '") + key + ".slopes' needs one entry per covariate");
        G.resize(mesh->num_nodes(), static_cast<Eigen::Index>(covs.size()));
        for (std::size_t k = 0; k < covs.size(); ++k) {
            try {
                G.col(static_cast<Eigen::Index>(k)) = mesh->sample(make_edge_function(Expression(covs[k]), mesh->graph()));
            } catch (const std::invalid_argument& e) {
                throw InputError(std::string("model spec: ") + key + ".covariates: " + e.what());
            }
        }
        theta.resize(slopes.size() + 1);
        theta(0) = r["intercept"].get<double>();
        theta.tail(slopes.size()) = slopes;
    };
    regression("kappa", s.tmpl.kappa_covariates, s.start.theta_kappa, false);
    regression("tau", s.tmpl.tau_covariates, s.start.theta_tau, s.tmpl.variance_stationary);
    if (j.contains("beta")) s.beta = json_vec(j["beta"], "beta");
    return s;
}

struct InferenceOptions {
    std::string graph;
    std::string obs;
    std::string model;
    double h = 0.1;
    double c = 1.0;
    std::string out;
};

void add_inference_options(CLI::App* app, InferenceOptions& o) {
    app->add_option("graph", o.graph, "graph JSON file or builtin")->required();
    app->add_option("observations", o.obs, "CSV with edge_id,t,value[,replicate,covariates...]")->required();
    app->add_option("--model", o.model, "model spec JSON")->required();
    app->add_option("--h", o.h, "target mesh width")->check(CLI::PositiveNumber);
    app->add_option("--c", o.c, "calibration constant for the rational order")->check(CLI::PositiveNumber);
    app->add_option("--out", o.out, "output file")->required();
}

ObservationSet read_obs(const std::string& path, const MetricGraph& g) {
    try {
        return read_observations_csv(read_text_file(path), g);
    } catch (const std::exception& e) {
        throw InputError(e.what());
    }
}

// Fixed effects from the spec, otherwise by generalized least squares.
Eigen::VectorXd resolve_beta(const ModelSpec& spec, const FieldModel& model, const PrecisionBlocks& blocks,
                             const ObservationSet& obs) {
    if (spec.beta) {
        if (spec.beta->size() != obs.num_covariates())
            throw InputError("model spec: 'beta' needs one entry per observation covariate column");
        return *spec.beta;
    }
    return profile_log_likelihood(model, blocks, obs, spec.start.sigma_e).beta;
}

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Gaussian random fields on metric graphs"};
    app.set_help_flag("--help", "print this help and exit");  // -h would clash with --h
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "read options from a TOML or INI file (flags take precedence)");
    app.require_subcommand(1);
    app.fallthrough();
    int threads = default_threads();
    app.add_option("--threads", threads, "worker threads (GRAPHFIELD_THREADS overrides)")->check(CLI::PositiveNumber);
    app.set_version_flag("--version", GRAPHFIELD_VERSION);

    // graph
    auto* graph_cmd = app.add_subcommand("graph", "validate or export graphs");
    graph_cmd->require_subcommand(1);
    std::string graph_in, graph_out;
    auto* validate_cmd = graph_cmd->add_subcommand("validate", "check a graph file and print diagnostics");
    validate_cmd->add_option("graph", graph_in, "graph JSON file or builtin")->required();
    auto* export_cmd = graph_cmd->add_subcommand("export", "write a graph (e.g. a builtin) as JSON");
    export_cmd->add_option("graph", graph_in, "graph JSON file or builtin")->required();
    export_cmd->add_option("--out", graph_out, "output JSON")->required();

    // mesh
    auto* mesh_cmd = app.add_subcommand("mesh", "build a mesh and report its size");
    std::string mesh_graph, mesh_dump, mesh_matrices;
    double mesh_h = 0.1;
    mesh_cmd->add_option("graph", mesh_graph, "graph JSON file or builtin")->required();
    mesh_cmd->add_option("--h", mesh_h, "target mesh width")->check(CLI::PositiveNumber);
    mesh_cmd->add_option("--dump", mesh_dump, "node table CSV (node_id, edge, t)");
    mesh_cmd->add_option("--matrices", mesh_matrices, "prefix for C, C~ and G dumps in coordinate format");

    // rational
    auto* rational_cmd = app.add_subcommand("rational", "rational approximation of x^alpha on [0, 1]");
    double r_alpha = 0.5;
    int r_m = 2;
    std::string r_out;
    rational_cmd->add_option("--alpha", r_alpha, "exponent; the fractional part is used")->required();
    rational_cmd->add_option("--m", r_m, "order")->check(CLI::PositiveNumber);
    rational_cmd->add_option("--out", r_out, "write JSON here instead of standard output");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "draw samples of the field at the mesh nodes");
    FieldOptions sim;
    int sim_n = 1;
    std::uint64_t sim_seed = 1;
    std::string sim_out, sim_nodes;
    add_field_options(sim_cmd, sim);
    sim_cmd->add_option("--n", sim_n, "number of samples")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--seed", sim_seed, "random seed");
    sim_cmd->add_option("--out", sim_out, "samples CSV, one row per sample")->required();
    sim_cmd->add_option("--nodes", sim_nodes, "node table CSV");

    // cov
    auto* cov_cmd = app.add_subcommand("cov", "covariance between a point and every node");
    FieldOptions cov;
    std::string cov_point, cov_out;
    add_field_options(cov_cmd, cov);
    cov_cmd->add_option("--point", cov_point, "edge_id,t")->required();
    cov_cmd->add_option("--out", cov_out, "output CSV")->required();

    // varstat
    auto* var_cmd = app.add_subcommand("varstat", "tau for a variance-stationary field");
    FieldOptions var;
    double var_sigma0 = 1.0;
    std::string var_out;
    add_field_options(var_cmd, var, false);
    var_cmd->add_option("--sigma0", var_sigma0, "target marginal standard deviation")->check(CLI::PositiveNumber);
    var_cmd->add_option("--out", var_out, "output CSV")->required();

    // oracle
    auto* oracle_cmd = app.add_subcommand("oracle", "exact covariance on the interval, circle or tadpole");
    std::string o_graph = "interval", o_out;
    double o_alpha = 1.5, o_kappa = 10.0, o_tau = 1.0, o_h = 0.05;
    oracle_cmd->add_option("--graph", o_graph, "interval, circle or tadpole");
    oracle_cmd->add_option("--alpha", o_alpha, "smoothness");
    oracle_cmd->add_option("--kappa", o_kappa, "kappa")->check(CLI::PositiveNumber);
    oracle_cmd->add_option("--tau", o_tau, "tau")->check(CLI::PositiveNumber);
    oracle_cmd->add_option("--h", o_h, "grid spacing")->check(CLI::PositiveNumber);
    oracle_cmd->add_option("--out", o_out, "covariance CSV")->required();

    // convergence
    auto* conv_cmd = app.add_subcommand("convergence", "covariance error rates against the exact oracle");
    std::string cv_graph = "interval", cv_alphas = "0.75,0.875,1,1.125,1.5", cv_levels = "4.5:0.25:5.5", cv_out,
                cv_gnuplot;
    double cv_rho = 0.5, cv_hok = 1.0 / 512.0, cv_c = 1.0;
    int cv_m = 0;
    conv_cmd->add_option("--graph", cv_graph, "interval, circle or tadpole");
    conv_cmd->add_option("--alphas", cv_alphas, "comma list");
    conv_cmd->add_option("--levels", cv_levels, "l values for h = 2^-l, a:step:b or comma list");
    conv_cmd->add_option("--rho", cv_rho, "practical range")->check(CLI::PositiveNumber);
    conv_cmd->add_option("--h-ok", cv_hok, "reference mesh width")->check(CLI::PositiveNumber);
    conv_cmd->add_option("--c", cv_c, "calibration constant for the rational order")->check(CLI::PositiveNumber);
    conv_cmd->add_option("--m", cv_m, "fixed rational order (0: calibrate)")->check(CLI::NonNegativeNumber);
    conv_cmd->add_option("--out", cv_out, "per-level error CSV")->required();
    conv_cmd->add_option("--gnuplot", cv_gnuplot, "write a gnuplot script for the error curves");

    // krige / fit / cv
    auto* krige_cmd = app.add_subcommand("krige", "posterior mean (and variance) at the mesh nodes");
    InferenceOptions kr;
    bool kr_var = false;
    add_inference_options(krige_cmd, kr);
    krige_cmd->add_flag("--variance", kr_var, "also compute posterior variances");

    auto* fit_cmd = app.add_subcommand("fit", "maximum likelihood estimation");
    InferenceOptions ft;
    int ft_evals = 3000;
    add_inference_options(fit_cmd, ft);
    fit_cmd->add_option("--max-evaluations", ft_evals, "likelihood evaluation budget")->check(CLI::PositiveNumber);

    auto* xv_cmd = app.add_subcommand("cv", "leave-radius-out cross-validation");
    InferenceOptions xv;
    std::string xv_radii = "0,0.5,1,2,4";
    add_inference_options(xv_cmd, xv);
    xv_cmd->add_option("--radii", xv_radii, "comma list of exclusion radii");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << '\n';
        return 2;
    }

    if (const char* env = std::getenv("GRAPHFIELD_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*env == '\0' || *end != '\0' || v < 1) throw InputError("GRAPHFIELD_THREADS must be a positive integer");
        threads = static_cast<int>(v);
    }
    g_run.threads = threads;
    for (int i = 0; i < argc; ++i) g_run.argv.emplace_back(argv[i]);
    {
        // Keep the global options and the selected subcommand's section.
        const auto* sub = app.get_subcommands().front();
        std::istringstream all(app.config_to_str(true, false));
        std::string line;
        while (std::getline(all, line)) {
            const auto eq = line.find('=');
            const std::string key = line.substr(0, eq);
            if (key.find('.') == std::string::npos || key.rfind(sub->get_name() + ".", 0) == 0) g_run.config += line + "\n";
        }
    }

    if (*graph_cmd) {
        g_run.subcommand = "graph";
        MetricGraph g;
        try {
            g = resolve_graph(graph_in);
        } catch (const std::exception& e) {
            throw InputError(e.what());
        }
        if (*validate_cmd) {
            const GraphDiagnostics d = validate(g);
            json j{{"ok", d.ok},
                   {"vertices", g.num_vertices()},
                   {"edges", g.num_edges()},
                   {"total_length", d.total_length},
                   {"connected", d.connected},
                   {"degrees", d.degrees},
                   {"errors", d.errors}};
            std::cout << j.dump(2) << '\n';
            return d.ok ? 0 : 3;
        }
        write_text(graph_out, write_graph_json(g));
    } else if (*mesh_cmd) {
        g_run.subcommand = "mesh";
        const auto mesh = mesh_for(mesh_graph, mesh_h);
        json j{{"h", mesh->h()}, {"nodes", mesh->num_nodes()}};
        std::vector<int> ne;
        for (std::size_t e = 0; e < mesh->graph().num_edges(); ++e) ne.push_back(mesh->segments(static_cast<int>(e)));
        j["segments_per_edge"] = ne;
        std::cout << j.dump(2) << '\n';
        if (!mesh_dump.empty()) write_text(mesh_dump, csv({"node_id", "edge", "t"}, node_table(*mesh)));
        if (!mesh_matrices.empty()) {
            const SparseMatrix C = assemble_mass(*mesh);
            std::ostringstream c, ct, gm;
            dump_matrix(c, C);
            dump_matrix(ct, diagonal_matrix(lump_mass(C)));
            dump_matrix(gm, assemble_stiffness(*mesh));
            write_text(mesh_matrices + "C.txt", c.str());
            write_text(mesh_matrices + "Ctilde.txt", ct.str());
            write_text(mesh_matrices + "G.txt", gm.str());
        }
    } else if (*rational_cmd) {
        g_run.subcommand = "rational";
        const double frac = fractional_part(r_alpha);
        if (frac == 0.0) throw InputError("rational: alpha has no fractional part");
        const RationalApprox r = brasil(frac, r_m);
        json j{{"alpha", r.alpha},
               {"m", r.m},
               {"support", vec_json(r.support)},
               {"weights", vec_json(r.weights)},
               {"nodes", vec_json(r.nodes)},
               {"sup_error", r.sup_error},
               {"deviation_ratio", r.deviation_ratio},
               {"iterations", r.iterations}};
        if (r.numerator.size() > 0) {
            j["numerator"] = vec_json(r.numerator);
            j["denominator"] = vec_json(r.denominator);
        }
        const PartialFractions pf = partial_fractions(r);
        j["poles"] = vec_json(pf.poles);
        j["residues"] = vec_json(pf.residues);
        j["k"] = pf.k;
        if (r_out.empty()) std::cout << j.dump(2) << '\n';
        else write_text(r_out, j.dump(2) + "\n");
    } else if (*sim_cmd) {
        g_run.subcommand = "simulate";
        const auto mesh = mesh_for(sim.graph, sim.h);
        const FieldModel model = field_from(sim, mesh);
        const PrecisionBlocks blocks = precision_blocks(model);
        for (const auto& w : blocks.warnings) std::cerr << "warning: " << w << '\n';
        const Eigen::MatrixXd X = sample(blocks, sim_n, sim_seed, threads);
        std::vector<std::string> header;
        for (int i = 0; i < mesh->num_nodes(); ++i) header.push_back("node_" + std::to_string(i));
        write_text(sim_out, csv(header, X));
        if (!sim_nodes.empty()) write_text(sim_nodes, csv({"node_id", "edge", "t"}, node_table(*mesh)));
        g_run.extra = {{"nodes", mesh->num_nodes()}, {"m", model.order()}, {"seed", sim_seed}};
    } else if (*cov_cmd) {
        g_run.subcommand = "cov";
        const auto mesh = mesh_for(cov.graph, cov.h);
        const FieldModel model = field_from(cov, mesh);
        const PrecisionBlocks blocks = precision_blocks(model);
        const Eigen::VectorXd row = covariance_row(model, blocks, parse_point(mesh->graph(), cov_point));
        Eigen::MatrixXd out(mesh->num_nodes(), 4);
        out.leftCols(3) = node_table(*mesh);
        out.col(3) = row;
        write_text(cov_out, csv({"node_id", "edge", "t", "cov"}, out));
        g_run.extra = {{"m", model.order()}};
    } else if (*var_cmd) {
        g_run.subcommand = "varstat";
        const auto mesh = mesh_for(var.graph, var.h);
        const Diagonal kappa = mesh->sample(make_edge_function(Expression(var.kappa), mesh->graph()));
        const FieldModel model =
            variance_stationary_model(mesh, kappa, var.alpha, var_sigma0, order_for(var.alpha, mesh->h(), var.m, var.c));
        const Eigen::VectorXd v = marginal_variance(precision_blocks(model));
        Eigen::MatrixXd out(mesh->num_nodes(), 6);
        out.leftCols(3) = node_table(*mesh);
        out.col(3) = kappa;
        out.col(4) = model.tau();
        out.col(5) = v;
        write_text(var_out, csv({"node_id", "edge", "t", "kappa", "tau", "variance"}, out));
        g_run.extra = {{"max_abs_deviation", (v.array() - var_sigma0 * var_sigma0).abs().maxCoeff()}};
    } else if (*oracle_cmd) {
        g_run.subcommand = "oracle";
        OracleGraph og;
        try {
            og = parse_oracle_graph(o_graph);
        } catch (const std::invalid_argument& e) {
            throw InputError(e.what());
        }
        const Mesh mesh = build_mesh(oracle_graph(og), o_h);
        const Eigen::MatrixXd S = exact_covariance(og, mesh, o_alpha, o_kappa, o_tau);
        Eigen::MatrixXd out(mesh.num_nodes(), 2 + mesh.num_nodes());
        out.leftCols(2) = node_table(mesh).rightCols(2);
        out.rightCols(mesh.num_nodes()) = S;
        std::vector<std::string> header{"edge", "t"};
        for (int i = 0; i < mesh.num_nodes(); ++i) header.push_back("cov_" + std::to_string(i));
        write_text(o_out, csv(header, out));
    } else if (*conv_cmd) {
        g_run.subcommand = "convergence";
        OracleGraph og;
        try {
            og = parse_oracle_graph(cv_graph);
        } catch (const std::invalid_argument& e) {
            throw InputError(e.what());
        }
        ExperimentOptions opts;
        opts.h_ok = cv_hok;
        opts.calibration = cv_c;
        if (cv_m > 0) opts.fixed_m = cv_m;
        opts.threads = threads;
        const RateResult res = rate_experiment(og, parse_list(cv_alphas, "--alphas"), parse_range(cv_levels, "--levels"),
                                               cv_rho, opts);
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(res.records.size()), 7);
        for (std::size_t i = 0; i < res.records.size(); ++i) {
            const auto& r = res.records[i];
            rows.row(static_cast<Eigen::Index>(i)) << r.alpha, r.m, r.h_target, r.h, r.l2, r.sup, r.seconds;
        }
        write_text(cv_out, csv({"alpha", "m", "h_target", "h", "l2_error", "sup_error", "seconds"}, rows));
        Eigen::MatrixXd fits(static_cast<Eigen::Index>(res.fits.size()), 5);
        std::cout << "graph " << to_string(og) << ", rho " << cv_rho << "\n  alpha   slope   theory   residual\n";
        for (std::size_t i = 0; i < res.fits.size(); ++i) {
            const auto& f = res.fits[i];
            fits.row(static_cast<Eigen::Index>(i)) << f.alpha, f.slope, f.theoretical, f.intercept, f.residual;
            std::cout << "  " << format_double(f.alpha) << "  " << std::round(f.slope * 1000.0) / 1000.0 << "  "
                      << f.theoretical << "  " << f.residual << '\n';
        }
        write_text(cv_out + ".slopes.csv", csv({"alpha", "slope", "theoretical", "intercept", "residual"}, fits));
        if (!cv_gnuplot.empty()) {
            std::ostringstream gp;
            gp << "set logscale xy\nset xlabel 'h'\nset ylabel 'L2 error'\nset datafile separator ','\nplot ";
            for (std::size_t i = 0; i < res.fits.size(); ++i)
                gp << (i ? ", " : "") << "'" << cv_out << "' using ($1==" << format_double(res.fits[i].alpha)
                   << " ? $4 : 1/0):5 with linespoints title 'alpha " << format_double(res.fits[i].alpha) << "'";
            gp << '\n';
            write_text(cv_gnuplot, gp.str());
        }
    } else if (*krige_cmd || *fit_cmd || *xv_cmd) {
        InferenceOptions& o = *krige_cmd ? kr : (*fit_cmd ? ft : xv);
        g_run.subcommand = *krige_cmd ? "krige" : (*fit_cmd ? "fit" : "cv");
        const auto mesh = mesh_for(o.graph, o.h);
        const ObservationSet obs = read_obs(o.obs, mesh->graph());
        const ModelSpec spec = read_model_spec(o.model, mesh, o.c);
        if (*fit_cmd) {
            FitOptions fo;
            fo.max_evaluations = ft_evals;
            const FitResult r = fit(spec.tmpl, obs, spec.start, fo);
            json j{{"converged", r.converged},
                   {"message", r.message},
                   {"log_likelihood", r.log_likelihood},
                   {"evaluations", r.evaluations},
                   {"alpha", r.estimate.alpha},
                   {"sigma_e", r.estimate.sigma_e},
                   {"theta_tau", vec_json(r.estimate.theta_tau)},
                   {"theta_kappa", vec_json(r.estimate.theta_kappa)},
                   {"beta", vec_json(r.estimate.beta)},
                   {"names", r.names},
                   {"packed", vec_json(r.packed)},
                   {"notes", r.notes}};
            json se = json::array();
            for (Eigen::Index i = 0; i < r.standard_errors.size(); ++i) {
                if (std::isfinite(r.standard_errors(i))) se.push_back(r.standard_errors(i));
                else se.push_back(nullptr);
            }
            j["standard_errors"] = se;
            if (!r.converged) std::cerr << "warning: " << r.message << '\n';
            write_text(o.out, j.dump(2) + "\n");
        } else {
            if (!spec.tmpl.alpha) throw InputError("model spec: alpha must be a number for " + g_run.subcommand);
            const FieldModel model = build_model(spec.tmpl, spec.start);
            const PrecisionBlocks blocks = precision_blocks(model);
            const Eigen::VectorXd beta = resolve_beta(spec, model, blocks, obs);
            g_run.extra = {{"m", model.order()}, {"beta", vec_json(beta)}};
            if (*krige_cmd) {
                if (obs.replicates.size() != 1) throw InputError("krige: expected a single replicate");
                const Replicate& rep = obs.replicates.front();
                Eigen::VectorXd y = rep.y;
                if (beta.size() > 0) y -= rep.design * beta;
                const PosteriorSummary ps = kriging(model, blocks, rep.locations, y, spec.start.sigma_e, kr_var);
                Eigen::MatrixXd out(mesh->num_nodes(), kr_var ? 5 : 4);
                out.leftCols(3) = node_table(*mesh);
                out.col(3) = ps.mean;
                std::vector<std::string> header{"node_id", "edge", "t", "mean"};
                if (kr_var) {
                    out.col(4) = ps.variance;
                    header.push_back("variance");
                }
                write_text(o.out, csv(header, out));
            } else {
                const auto radii = parse_list(xv_radii, "--radii");
                const CvResult r = leave_radius_out_cv(model, blocks, obs, spec.start.sigma_e, beta, radii, threads);
                Eigen::MatrixXd out(static_cast<Eigen::Index>(radii.size()), 5);
                for (std::size_t i = 0; i < radii.size(); ++i)
                    out.row(static_cast<Eigen::Index>(i)) << r.radii[i], r.mse[i], r.nls[i], r.predictions[i], r.skipped[i];
                write_text(o.out, csv({"radius", "mse", "nls", "predictions", "skipped"}, out));
            }
        }
    }
    write_manifests();
    return 0;
}

int main(int argc, char** argv) {
    auto report = [](const char* kind, const std::exception& e, int code) {
        json j{{"error", {{"kind", kind}, {"message", e.what()}}}};
        std::cerr << j.dump() << '\n';
        return code;
    };
    try {
        return run(argc, argv);
    } catch (const InputError& e) {
        return report("input", e, 3);
    } catch (const std::invalid_argument& e) {
        return report("input", e, 3);
    } catch (const std::out_of_range& e) {
        return report("input", e, 3);
    } catch (const std::exception& e) {
        return report("numerical", e, 4);
    }
}
