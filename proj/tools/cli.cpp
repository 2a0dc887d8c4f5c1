#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "nafrssr/metrics.hpp"
#include "nafrssr/training.hpp"

namespace nafrssr::cli {

namespace fs = std::filesystem;

ArchConfig resolve_model(const std::string& spec) {
    if (fs::is_regular_file(spec)) return load_config(spec);
    return preset(spec);
}

std::pair<int, int> parse_hw(const std::string& text) {
    const auto x = text.find_first_of("xX");
    if (x == std::string::npos) throw std::invalid_argument("expected HxW, got '" + text + "'");
    try {
        std::size_t a = 0, b = 0;
        const int h = std::stoi(text.substr(0, x), &a), w = std::stoi(text.substr(x + 1), &b);
        if (a == x && b == text.size() - x - 1 && h > 0 && w > 0) return {h, w};
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("expected HxW with positive sides, got '" + text + "'");
}

BenchStats summarize_times(std::vector<double> seconds) {
    if (seconds.empty()) throw std::invalid_argument("no timings");
    std::sort(seconds.begin(), seconds.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(seconds.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, seconds.size() - 1);
        return seconds[lo] + (pos - static_cast<double>(lo)) * (seconds[hi] - seconds[lo]);
    };
    return {quantile(0.5), quantile(0.25), quantile(0.75)};
}

std::vector<double> time_forward(const Model& model, int h, int w, int iters, int warmup) {
    if (iters < 1) throw std::invalid_argument("iters must be positive");
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    auto random_view = [&] {
        Tensor t(Shape{1, 3, h, w});
        for (double& v : t.mutable_data()) v = d(rng);
        return t;
    };
    const StereoPair lr{random_view(), random_view()};
    NoGradGuard guard;
    for (int i = 0; i < warmup; ++i) model.forward(lr);
    std::vector<double> out;
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const StereoPair sr = model.forward(lr);
        out.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return out;
}

namespace {

struct AblationRow {
    const char* preset;
    double published_k;  // thousands
};

constexpr AblationRow kAblationSuite[] = {
    {"NAFSSR-T", 460.66}, {"T-DSSCAM", 316.29}, {"T-NoSCA", 423.02}, {"T-NAFGCBlock-1", 413.82}, {"T-edge", 460.67},
};

std::string with_commas(std::uint64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

Model make_model(const std::string& spec, const std::string& weights, bool zero, std::uint64_t seed) {
    Model m = Model::build(resolve_model(spec), seed);
    if (zero) m.parameters().fill(0.0);
    if (!weights.empty()) m.load_weights(weights);
    return m;
}

Image checked_downsample(const Image& hr, const std::string& name) {
    if (hr.width % 4 != 0 || hr.height % 4 != 0)
        throw std::runtime_error(name + ": " + std::to_string(hr.width) + "x" + std::to_string(hr.height) + " is not divisible by 4");
    return bicubic_resize(hr, {1, 4});
}

// Crops to the largest multiple of 4 from the top-left corner.
Image crop4(const Image& img) {
    const int w = img.width / 4 * 4, h = img.height / 4 * 4;
    if (w == img.width && h == img.height) return img;
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        std::copy_n(img.samples.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(y) * img.width) * 3),
                    static_cast<std::size_t>(w) * 3, out.samples.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(y) * w * 3));
    return out;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stereo image super-resolution toolkit (x4)", "nafrssr"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::string model_spec = "NAFRSSR-M", weights, left, right, out_dir, manifest, hr_dir, csv_path, hw = "128x128";
    std::uint64_t seed = 0;
    bool zero = false;

    auto add_model = [&](CLI::App* c, bool with_weights) {
        c->add_option("--model", model_spec, "preset name or config file")->capture_default_str();
        c->add_option("--seed", seed, "initialization seed")->capture_default_str();
        if (with_weights) {
            c->add_option("--weights", weights, "weight file")->check(CLI::ExistingFile);
            c->add_flag("--zero-weights", zero, "set every parameter to zero (bicubic baseline)");
        }
    };

    auto* infer = app.add_subcommand("infer", "super-resolve one stereo pair");
    add_model(infer, true);
    infer->add_option("--left", left, "left LR image (PPM)")->required()->check(CLI::ExistingFile);
    infer->add_option("--right", right, "right LR image (PPM)")->required()->check(CLI::ExistingFile);
    infer->add_option("--out-dir", out_dir, "output directory")->required();

    std::string ds_in, ds_out;
    auto* downsample = app.add_subcommand("downsample", "bicubic /4 of HR images");
    auto* ds_single = downsample->add_option("--in", ds_in, "HR image (PPM)")->check(CLI::ExistingFile);
    downsample->add_option("--out", ds_out, "LR output path")->needs(ds_single);
    auto* ds_manifest = downsample->add_option("--manifest", manifest, "left<TAB>right list")->check(CLI::ExistingFile)->excludes(ds_single);
    downsample->add_option("--hr-dir", hr_dir, "directory the manifest is relative to")->needs(ds_manifest);
    downsample->add_option("--out-dir", out_dir, "LR output directory")->needs(ds_manifest);

    auto* metrics = app.add_subcommand("metrics", "PSNR / SSIM of a model over an HR stereo set");
    add_model(metrics, true);
    metrics->add_option("--manifest", manifest, "left<TAB>right list")->required()->check(CLI::ExistingFile);
    metrics->add_option("--hr-dir", hr_dir, "HR image directory")->required()->check(CLI::ExistingDirectory);
    metrics->add_option("--csv", csv_path, "write the per-image report here instead of stdout");

    bool table = false;
    auto* params = app.add_subcommand("params", "exact parameter count");
    params->add_option("--model", model_spec, "preset name or config file");
    params->add_flag("--table", table, "every preset");

    auto* macs = app.add_subcommand("macs", "multiply-accumulate count of one forward pass");
    macs->add_option("--model", model_spec, "preset name or config file");
    macs->add_option("--hw", hw, "LR input size HxW")->capture_default_str();
    macs->add_flag("--table", table, "every preset");

    std::int64_t steps = 2000;
    int batch = 32;
    double lr_max = 3e-3, lr_min = 1e-7, beta1 = 0.9, beta2 = 0.9, weight_decay = 0.0;
    bool no_augment = false;
    std::string init_weights, resume_state, out_weights, state_path, loss_csv;
    auto* train_cmd = app.add_subcommand("train", "train on 30x90 LR patches cut from an HR stereo set");
    train_cmd->add_option("--model", model_spec, "preset name or config file")->capture_default_str();
    train_cmd->add_option("--seed", seed, "initialization and shuffling seed")->capture_default_str();
    train_cmd->add_option("--manifest", manifest, "left<TAB>right list")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--hr-dir", hr_dir, "HR image directory")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--steps", steps, "optimizer steps")->capture_default_str()->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--batch", batch, "patches per step")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr-max", lr_max, "initial learning rate")->capture_default_str();
    train_cmd->add_option("--lr-min", lr_min, "final learning rate")->capture_default_str();
    train_cmd->add_option("--beta1", beta1)->capture_default_str();
    train_cmd->add_option("--beta2", beta2)->capture_default_str();
    train_cmd->add_option("--weight-decay", weight_decay)->capture_default_str();
    train_cmd->add_flag("--no-augment", no_augment, "disable random flips");
    train_cmd->add_option("--init", init_weights, "start from these weights")->check(CLI::ExistingFile);
    train_cmd->add_option("--resume-state", resume_state, "optimizer sidecar to continue from")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", out_weights, "trained weights")->required();
    train_cmd->add_option("--state-out", state_path, "optimizer sidecar");
    train_cmd->add_option("--loss-csv", loss_csv, "per-step loss trace");

    std::vector<std::string> bench_models;
    int iters = 5, warmup = 1;
    auto* bench = app.add_subcommand("bench", "median forward time on random input");
    bench->add_option("--model", bench_models, "preset name or config file; repeat to compare")->required();
    bench->add_option("--hw", hw, "LR input size HxW")->capture_default_str();
    bench->add_option("--iters", iters, "timed passes")->capture_default_str()->check(CLI::PositiveNumber);
    bench->add_option("--warmup", warmup, "untimed passes first")->capture_default_str()->check(CLI::NonNegativeNumber);

    std::string suite;
    auto* ablate = app.add_subcommand("ablate", "parameter ledger of the ablation presets");
    ablate->add_option("--suite", suite, "suite name")->required()->check(CLI::IsMember({"table5"}));

    std::vector<std::string> argv_store;
    argv_store.reserve(args.size() + 1);
    argv_store.emplace_back("nafrssr");
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "nafrssr: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*infer) {
            Model m = make_model(model_spec, weights, zero, seed);
            const Image li = read_ppm(left), ri = read_ppm(right);
            if (li.width != ri.width || li.height != ri.height) throw std::runtime_error("left and right images differ in size");
            StereoPair sr;
            {
                NoGradGuard guard;
                sr = m.forward({image_to_tensor(li), image_to_tensor(ri)});
            }
            fs::create_directories(out_dir);
            const fs::path dir(out_dir);
            write_ppm(tensor_to_image(sr.left), dir / "left_sr.ppm");
            write_ppm(tensor_to_image(sr.right), dir / "right_sr.ppm");
            write_ppm(bicubic_resize(li, {4, 1}), dir / "left_bicubic.ppm");
            write_ppm(bicubic_resize(ri, {4, 1}), dir / "right_bicubic.ppm");
            out << "wrote " << (dir / "left_sr.ppm").string() << " " << (dir / "right_sr.ppm").string() << " ("
                << li.width * 4 << "x" << li.height * 4 << ")\n";
        } else if (*downsample) {
            if (!ds_in.empty()) {
                if (ds_out.empty()) throw CLI::RequiredError("--out");
                const Image lr = checked_downsample(read_ppm(ds_in), ds_in);
                ensure_parent(ds_out);
                write_ppm(lr, ds_out);
                out << ds_out << " " << lr.width << "x" << lr.height << "\n";
            } else {
                if (manifest.empty() || out_dir.empty()) throw CLI::RequiredError("--in/--out or --manifest/--out-dir");
                const fs::path base = hr_dir.empty() ? fs::path(manifest).parent_path() : fs::path(hr_dir);
                int count = 0;
                for (const auto& e : read_manifest(manifest))
                    for (const std::string& name : {e.left, e.right}) {
                        const fs::path target = fs::path(out_dir) / name;
                        ensure_parent(target);
                        write_ppm(checked_downsample(read_ppm(base / name), name), target);
                        ++count;
                    }
                out << "downsampled " << count << " images into " << out_dir << "\n";
            }
        } else if (*metrics) {
            const Model m = make_model(model_spec, weights, zero, seed);
            const EvalReport report = evaluate_dataset(m, manifest, hr_dir);
            if (csv_path.empty()) {
                write_report_csv(report, out);
            } else {
                ensure_parent(csv_path);
                std::ofstream f(csv_path);
                if (!f) throw std::runtime_error("cannot write " + csv_path);
                write_report_csv(report, f);
                out << "mean PSNR " << format_metric(report.mean_psnr_stereo, 4) << " dB, SSIM "
                    << format_metric(report.mean_ssim_stereo, 6) << " over " << report.images.size() << " pairs\n";
            }
        } else if (*params || *macs) {
            std::pair<int, int> size{0, 0};
            if (*macs) size = parse_hw(hw);
            std::vector<ArchConfig> configs;
            if (table)
                for (const auto& n : preset_names()) configs.push_back(preset(n));
            else
                configs.push_back(resolve_model(model_spec));
            for (const auto& c : configs) {
                const Model m = Model::build(c, 0);
                if (*params) {
                    if (table) out << c.name << '\t';
                    out << m.count_params() << '\n';
                } else {
                    const ModelMacs mc = m.count_macs(size.first, size.second);
                    if (table) out << c.name << '\t';
                    out << mc.total();
                    if (table) out << '\t' << mc.convs << '\t' << mc.attention;
                    out << '\n';
                }
            }
        } else if (*train_cmd) {
            Model m = make_model(model_spec, init_weights, false, seed);
            std::vector<StereoPatch> patches;
            for (const auto& e : read_manifest(manifest)) {
                const Image hl = crop4(read_ppm(fs::path(hr_dir) / e.left)), hr = crop4(read_ppm(fs::path(hr_dir) / e.right));
                if (hl.width != hr.width || hl.height != hr.height) throw std::runtime_error(e.left + " and " + e.right + " differ in size");
                // Pairs too small for one patch contribute nothing.
                if (hl.height < 120 || hl.width < 360) continue;
                const StereoPair lr{image_to_tensor(bicubic_resize(hl, {1, 4})), image_to_tensor(bicubic_resize(hr, {1, 4}))};
                auto p = extract_patches(lr, {image_to_tensor(hl), image_to_tensor(hr)});
                std::move(p.begin(), p.end(), std::back_inserter(patches));
            }
            if (patches.empty()) throw std::runtime_error("no 30x90 patches fit in the listed images (need HR of at least 360x120)");
            TrainOptions o;
            o.steps = steps;
            o.batch_size = batch;
            o.seed = seed;
            o.augment = !no_augment;
            o.schedule.lr_max = lr_max;
            o.schedule.lr_min = lr_min;
            o.adamw = {beta1, beta2, 1e-8, weight_decay};
            const std::int64_t report_every = std::max<std::int64_t>(1, steps / 20);
            o.on_step = [&](const LossRecord& r) {
                if (r.step % report_every == 0 || r.step + 1 == steps)
                    out << "step " << r.step << " lr " << r.lr << " loss " << r.loss << '\n' << std::flush;
            };
            AdamW opt(m.parameters(), o.adamw);
            if (!resume_state.empty()) opt.load_state(resume_state);
            out << patches.size() << " patches, " << m.count_params() << " parameters\n";
            const TrainResult r = train(m, patches, o, &opt);
            ensure_parent(out_weights);
            m.save_weights(out_weights);
            if (!state_path.empty()) {
                ensure_parent(state_path);
                opt.save_state(state_path);
            }
            if (!loss_csv.empty()) {
                ensure_parent(loss_csv);
                std::ofstream f(loss_csv);
                if (!f) throw std::runtime_error("cannot write " + loss_csv);
                write_loss_csv(r.trace, f);
            }
        } else if (*bench) {
            const auto [h, w] = parse_hw(hw);
            char line[160];
            std::snprintf(line, sizeof line, "%-16s %9s %5s %12s %12s\n", "model", "hw", "iters", "median_ms", "iqr_ms");
            out << line;
            for (const auto& spec : bench_models) {
                const Model m = Model::build(resolve_model(spec), seed);
                const BenchStats s = summarize_times(time_forward(m, h, w, iters, warmup));
                std::snprintf(line, sizeof line, "%-16s %9s %5d %12.3f %12.3f\n", m.config().name.c_str(), hw.c_str(), iters,
                              s.median * 1e3, s.iqr() * 1e3);
                out << line;
            }
        } else if (*ablate) {
            const std::uint64_t base = Model::build(preset("NAFSSR-T"), 0).count_params();
            bool ok = true;
            char line[160];
            std::snprintf(line, sizeof line, "%-16s %10s %10s %8s %9s %s\n", "preset", "built", "published", "delta", "delta_%", "check");
            out << line;
            for (const auto& row : kAblationSuite) {
                const std::uint64_t built = Model::build(preset(row.preset), 0).count_params();
                const auto published = static_cast<std::int64_t>(std::llround(row.published_k * 1000));
                const std::int64_t delta = static_cast<std::int64_t>(built) - published;
                const double pct = 100.0 * static_cast<double>(delta) / static_cast<double>(published);
                bool pass = false;
                std::string rule;
                const std::string name = row.preset;
                if (name == "NAFSSR-T") {
                    pass = built == 460656;
                    rule = "== 460,656";
                } else if (name == "T-NoSCA") {
                    pass = built == 423024;
                    rule = "== 423,024";
                } else if (name == "T-edge") {
                    pass = built == base + 10;
                    rule = "== NAFSSR-T + 10";
                } else {
                    pass = std::fabs(pct) <= 0.05;
                    rule = "within 0.05%";
                }
                ok = ok && pass;
                std::snprintf(line, sizeof line, "%-16s %10s %10s %+8lld %+9.4f %s (%s)\n", row.preset, with_commas(built).c_str(),
                              with_commas(static_cast<std::uint64_t>(published)).c_str(), static_cast<long long>(delta), pct,
                              pass ? "PASS" : "FAIL", rule.c_str());
                out << line;
            }
            if (!ok) return 1;
        }
    } catch (const CLI::ParseError& e) {
        err << "nafrssr: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "nafrssr: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace nafrssr::cli
