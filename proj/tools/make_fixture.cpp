// Regenerates the bundled test fixtures: a tiny CNN trained on a synthetic
// 10-class stroke-glyph task, a held-out evaluation set and the default
// device description.
//
//   make_fixture <out_dir> [--eval-count N] [--seed S]

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "ccnn/dse.hpp"
#include "ccnn/engine.hpp"
#include "ccnn/model.hpp"

namespace {

using namespace ccnn;

constexpr std::size_t kClasses = 10;
constexpr std::size_t kStrokePool = 7;
constexpr std::size_t kSide = 12;

using Image = std::vector<float>;

struct Segment {
    double x0, y0, x1, y1;
};

double segment_distance(double px, double py, const Segment& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = s.x0 + t * dx - px, cy = s.y0 + t * dy - py;
    return std::sqrt(cx * cx + cy * cy);
}

// Each class is three strokes drawn from a small shared pool, so classes
// differ from their neighbours by a single stroke.
std::vector<Image> make_prototypes(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coord(1.5, kSide - 2.5);
    std::vector<Segment> pool;
    for (std::size_t s = 0; s < kStrokePool; ++s) pool.push_back({coord(rng), coord(rng), coord(rng), coord(rng)});
    std::uniform_int_distribution<std::size_t> pick(0, kStrokePool - 1);
    std::vector<std::array<std::size_t, 3>> used;
    std::vector<Image> protos;
    while (protos.size() < kClasses) {
        std::array<std::size_t, 3> ids{pick(rng), pick(rng), pick(rng)};
        std::sort(ids.begin(), ids.end());
        if (ids[0] == ids[1] || ids[1] == ids[2]) continue;
        if (std::find(used.begin(), used.end(), ids) != used.end()) continue;
        used.push_back(ids);
        Image img(kSide * kSide);
        for (std::size_t y = 0; y < kSide; ++y) {
            for (std::size_t x = 0; x < kSide; ++x) {
                double d = 1e9;
                for (auto id : ids) d = std::min(d, segment_distance(x, y, pool[id]));
                img[y * kSide + x] = static_cast<float>(std::clamp(1.2 - d, 0.0, 1.0));
            }
        }
        protos.push_back(std::move(img));
    }
    return protos;
}

Image shifted(const Image& img, int dx, int dy) {
    Image out(img.size(), 0.0f);
    for (int y = 0; y < static_cast<int>(kSide); ++y) {
        for (int x = 0; x < static_cast<int>(kSide); ++x) {
            const int sx = x - dx, sy = y - dy;
            if (sx < 0 || sy < 0 || sx >= static_cast<int>(kSide) || sy >= static_cast<int>(kSide)) continue;
            out[y * kSide + x] = img[sy * kSide + sx];
        }
    }
    return out;
}

struct Sample {
    Image image;
    std::uint32_t label;
};

Sample draw_sample(const std::vector<Image>& protos, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint32_t> cls(0, kClasses - 1);
    std::uniform_int_distribution<int> shift(-1, 1);
    std::uniform_real_distribution<double> blend(0.0, 0.6);
    std::uniform_real_distribution<double> gain(0.7, 1.3);
    std::normal_distribution<double> noise(0.0, 0.2);

    const auto label = cls(rng);
    auto other = cls(rng);
    if (other == label) other = (other + 1) % kClasses;
    const double alpha = blend(rng) * blend(rng) / 0.6;  // skewed towards clean samples
    const double g = gain(rng);
    const auto a = shifted(protos[label], shift(rng), shift(rng));
    const auto b = shifted(protos[other], shift(rng), shift(rng));
    Image img(a.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(g * ((1.0 - alpha) * a[i] + alpha * b[i]) + noise(rng));
    }
    return {std::move(img), label};
}

// Float training network: conv-relu-pool, conv-relu-pool, fc.
struct Params {
    std::vector<float> w1, b1, w2, b2, w3, b3;
};

constexpr std::size_t C1 = 4, C2 = 8, H1 = kSide, H2 = kSide / 2, H3 = kSide / 4, F = C2 * H3 * H3;

void conv_forward(const std::vector<float>& in, std::size_t cin, std::size_t h, const std::vector<float>& w,
                  const std::vector<float>& b, std::size_t cout, std::vector<float>& out) {
    out.assign(cout * h * h, 0.0f);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < h; ++x) {
                float s = b[o];
                for (std::size_t c = 0; c < cin; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = static_cast<int>(y) + ky - 1;
                        if (iy < 0 || iy >= static_cast<int>(h)) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = static_cast<int>(x) + kx - 1;
                            if (ix < 0 || ix >= static_cast<int>(h)) continue;
                            s += w[((o * cin + c) * 3 + ky) * 3 + kx] * in[(c * h + iy) * h + ix];
                        }
                    }
                }
                out[(o * h + y) * h + x] = s;
            }
        }
    }
}

void conv_backward(const std::vector<float>& in, std::size_t cin, std::size_t h, const std::vector<float>& w,
                   std::size_t cout, const std::vector<float>& dout, std::vector<float>& dw, std::vector<float>& db,
                   std::vector<float>* din) {
    if (din) din->assign(cin * h * h, 0.0f);
    for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < h; ++x) {
                const float g = dout[(o * h + y) * h + x];
                if (g == 0.0f) continue;
                db[o] += g;
                for (std::size_t c = 0; c < cin; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = static_cast<int>(y) + ky - 1;
                        if (iy < 0 || iy >= static_cast<int>(h)) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = static_cast<int>(x) + kx - 1;
                            if (ix < 0 || ix >= static_cast<int>(h)) continue;
                            const std::size_t wi = ((o * cin + c) * 3 + ky) * 3 + kx;
                            const std::size_t ii = (c * h + iy) * h + ix;
                            dw[wi] += g * in[ii];
                            if (din) (*din)[ii] += g * w[wi];
                        }
                    }
                }
            }
        }
    }
}

void relu_pool(const std::vector<float>& in, std::size_t c, std::size_t h, std::vector<float>& out,
               std::vector<std::size_t>& argmax) {
    const std::size_t oh = h / 2;
    out.assign(c * oh * oh, 0.0f);
    argmax.assign(out.size(), 0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < oh; ++x) {
                std::size_t best = (ch * h + 2 * y) * h + 2 * x;
                for (std::size_t ky = 0; ky < 2; ++ky) {
                    for (std::size_t kx = 0; kx < 2; ++kx) {
                        const std::size_t i = (ch * h + 2 * y + ky) * h + 2 * x + kx;
                        if (in[i] > in[best]) best = i;
                    }
                }
                const std::size_t o = (ch * oh + y) * oh + x;
                out[o] = std::max(in[best], 0.0f);
                argmax[o] = best;
            }
        }
    }
}

struct Trace {
    std::vector<float> a1, p1, a2, p2, logits;
    std::vector<std::size_t> m1, m2;
};

void forward(const Params& p, const Image& img, Trace& t) {
    conv_forward(img, 1, H1, p.w1, p.b1, C1, t.a1);
    relu_pool(t.a1, C1, H1, t.p1, t.m1);
    conv_forward(t.p1, C1, H2, p.w2, p.b2, C2, t.a2);
    relu_pool(t.a2, C2, H2, t.p2, t.m2);
    t.logits.assign(kClasses, 0.0f);
    for (std::size_t o = 0; o < kClasses; ++o) {
        float s = p.b3[o];
        for (std::size_t k = 0; k < F; ++k) s += p.w3[o * F + k] * t.p2[k];
        t.logits[o] = s;
    }
}

void accumulate_gradients(const Params& p, const Image& img, std::uint32_t label, Trace& t, Params& g) {
    forward(p, img, t);
    std::vector<double> logits(t.logits.begin(), t.logits.end());
    const auto prob = softmax(logits);
    std::vector<float> dlogits(kClasses);
    for (std::size_t o = 0; o < kClasses; ++o) dlogits[o] = static_cast<float>(prob[o] - (o == label ? 1.0 : 0.0));

    std::vector<float> dp2(F, 0.0f);
    for (std::size_t o = 0; o < kClasses; ++o) {
        g.b3[o] += dlogits[o];
        for (std::size_t k = 0; k < F; ++k) {
            g.w3[o * F + k] += dlogits[o] * t.p2[k];
            dp2[k] += dlogits[o] * p.w3[o * F + k];
        }
    }
    std::vector<float> da2(t.a2.size(), 0.0f);
    for (std::size_t i = 0; i < dp2.size(); ++i) {
        if (t.a2[t.m2[i]] > 0.0f) da2[t.m2[i]] += dp2[i];
    }
    std::vector<float> dp1;
    conv_backward(t.p1, C1, H2, p.w2, C2, da2, g.w2, g.b2, &dp1);
    std::vector<float> da1(t.a1.size(), 0.0f);
    for (std::size_t i = 0; i < dp1.size(); ++i) {
        if (t.a1[t.m1[i]] > 0.0f) da1[t.m1[i]] += dp1[i];
    }
    conv_backward(img, 1, H1, p.w1, C1, da1, g.w1, g.b1, nullptr);
}

Params zeros_like(const Params& p) {
    auto z = [](const std::vector<float>& v) { return std::vector<float>(v.size(), 0.0f); };
    return {z(p.w1), z(p.b1), z(p.w2), z(p.b2), z(p.w3), z(p.b3)};
}

Params init_params(std::mt19937_64& rng) {
    auto he = [&](std::size_t n, std::size_t fan_in) {
        std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(d(rng));
        return v;
    };
    return {he(C1 * 9, 9),           std::vector<float>(C1, 0.0f), he(C2 * C1 * 9, C1 * 9),
            std::vector<float>(C2, 0.0f), he(kClasses * F, F),        std::vector<float>(kClasses, 0.0f)};
}

void sgd_step(Params& p, Params& velocity, const Params& g, float lr, float momentum, float scale) {
    auto upd = [&](std::vector<float>& w, std::vector<float>& v, const std::vector<float>& gw) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] - lr * gw[i] * scale;
            w[i] += v[i];
        }
    };
    upd(p.w1, velocity.w1, g.w1);
    upd(p.b1, velocity.b1, g.b1);
    upd(p.w2, velocity.w2, g.w2);
    upd(p.b2, velocity.b2, g.b2);
    upd(p.w3, velocity.w3, g.w3);
    upd(p.b3, velocity.b3, g.b3);
}

ModelGraph to_graph(const Params& p) {
    ModelGraph g;
    g.input_shape = {1, kSide, kSide};
    g.layers = {
        {"conv1", Conv{1, C1, 3, 3, 1, 1}}, {"relu1", ReLU{}}, {"pool1", MaxPool{2, 2}},
        {"conv2", Conv{C1, C2, 3, 3, 1, 1}}, {"relu2", ReLU{}}, {"pool2", MaxPool{2, 2}},
        {"fc", FullyConnected{F, kClasses}}, {"prob", Softmax{}},
    };
    g.weights["conv1"] = {Tensor({C1, 1, 3, 3}, p.w1), Tensor({C1}, p.b1)};
    g.weights["conv2"] = {Tensor({C2, C1, 3, 3}, p.w2), Tensor({C2}, p.b2)};
    g.weights["fc"] = {Tensor({kClasses, F}, p.w3), Tensor({kClasses}, p.b3)};
    return g;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regenerate the bundled CNN + evaluation-set fixtures"};
    std::string out_dir;
    std::size_t eval_count = 200;
    std::size_t train_count = 3000;
    std::size_t epochs = 25;
    std::uint64_t seed = 2018;
    app.add_option("out_dir", out_dir, "Output directory")->required();
    app.add_option("--eval-count", eval_count, "Evaluation samples");
    app.add_option("--train-count", train_count, "Training samples");
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--seed", seed, "RNG seed");
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(seed);
    const auto protos = make_prototypes(rng);
    std::vector<Sample> train, eval;
    for (std::size_t i = 0; i < train_count; ++i) train.push_back(draw_sample(protos, rng));
    for (std::size_t i = 0; i < eval_count; ++i) eval.push_back(draw_sample(protos, rng));

    Params params = init_params(rng);
    Params velocity = zeros_like(params);
    Trace trace;
    constexpr std::size_t kBatch = 32;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const float lr = epoch < epochs * 2 / 3 ? 0.02f : 0.005f;
        for (std::size_t start = 0; start < order.size(); start += kBatch) {
            Params grad = zeros_like(params);
            const std::size_t end = std::min(order.size(), start + kBatch);
            for (std::size_t i = start; i < end; ++i) {
                accumulate_gradients(params, train[order[i]].image, train[order[i]].label, trace, grad);
            }
            sgd_step(params, velocity, grad, lr, 0.9f, 1.0f / static_cast<float>(end - start));
        }
    }

    const auto graph = to_graph(params);
    EvalSet set;
    set.num_classes = kClasses;
    for (const auto& s : eval) {
        set.samples.emplace_back(Shape{1, kSide, kSide}, s.image);
        set.labels.push_back(s.label);
    }
    EvalSet train_set;
    train_set.num_classes = kClasses;
    for (const auto& s : train) {
        train_set.samples.emplace_back(Shape{1, kSide, kSide}, s.image);
        train_set.labels.push_back(s.label);
    }

    std::filesystem::create_directories(out_dir);
    save_model(graph, std::filesystem::path(out_dir) / "tiny_cnn.ccnn");
    save_eval_set(set, std::filesystem::path(out_dir) / ("eval_" + std::to_string(eval_count) + ".ccev"));
    save_device(default_device(), (std::filesystem::path(out_dir) / "device.json").string());
    std::cout << "train top1 error " << reference_error(graph, train_set, Metric::top1) << "\n"
              << "eval  top1 error " << reference_error(graph, set, Metric::top1) << "\n"
              << "eval  top5 error " << reference_error(graph, set, Metric::top5) << "\n";
    return 0;
}
