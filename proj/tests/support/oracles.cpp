#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace n4::oracle {

namespace {

int fold(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace

MultiChannelImage paddedWindow(const MultiChannelImage& image, int row, int col, int size) {
    // Build the fully padded copy, then crop.
    const int pad = size;  // generous
    MultiChannelImage padded(image.channels, image.height + 2 * pad, image.width + 2 * pad);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < padded.height; ++y) {
            for (int x = 0; x < padded.width; ++x) {
                padded.at(c, y, x) = image.at(c, fold(y - pad, image.height), fold(x - pad, image.width));
            }
        }
    }
    const int r0 = row - size / 2 + pad;
    const int c0 = col - size / 2 + pad;
    MultiChannelImage out(image.channels, size, size);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) out.at(c, y, x) = padded.at(c, r0 + y, c0 + x);
        }
    }
    return out;
}

MultiChannelImage bruteAccumulate(
    const std::vector<std::pair<std::array<int, 2>, AnnotationPatch>>& outputs, int height,
    int width, int patchSize) {
    MultiChannelImage out(1, height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double sum = 0.0;
            int count = 0;
            for (const auto& [center, patch] : outputs) {
                const int r0 = center[0] - patchSize / 2;
                const int c0 = center[1] - patchSize / 2;
                if (y >= r0 && y < r0 + patchSize && x >= c0 && x < c0 + patchSize) {
                    sum += patch.at(y - r0, x - c0);
                    ++count;
                }
            }
            out.at(0, y, x) = count ? sum / count : 0.0;
        }
    }
    return out;
}

std::vector<double> bruteChannelMeans(const std::vector<MultiChannelImage>& images) {
    std::vector<double> sums(static_cast<std::size_t>(images[0].channels), 0.0);
    std::vector<std::size_t> counts(sums.size(), 0);
    for (const auto& img : images) {
        for (int c = 0; c < img.channels; ++c) {
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) {
                    sums[static_cast<std::size_t>(c)] += img.at(c, y, x);
                    counts[static_cast<std::size_t>(c)] += 1;
                }
            }
        }
    }
    for (std::size_t c = 0; c < sums.size(); ++c) sums[c] /= static_cast<double>(counts[c]);
    return sums;
}

void jacobiEigenSymmetric(Eigen::MatrixXd a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
    const int n = static_cast<int>(a.rows());
    vectors = Eigen::MatrixXd::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = vectors(k, p), vkq = vectors(k, q);
                    vectors(k, p) = c * vkp - s * vkq;
                    vectors(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    values.resize(n);
    for (int i = 0; i < n; ++i) values(i) = a(i, i);
    // Sort descending.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&values](int x, int y) { return values(x) > values(y); });
    Eigen::VectorXd sortedValues(n);
    Eigen::MatrixXd sortedVectors(n, n);
    for (int i = 0; i < n; ++i) {
        sortedValues(i) = values(order[static_cast<std::size_t>(i)]);
        sortedVectors.col(i) = vectors.col(order[static_cast<std::size_t>(i)]);
    }
    values = sortedValues;
    vectors = sortedVectors;
}

Eigen::MatrixXd pcaSubspaceOracle(const Eigen::MatrixXd& samples, int k,
                                  Eigen::VectorXd* variances) {
    const Eigen::Index s = samples.rows();
    const Eigen::Index d = samples.cols();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < s; ++i) mean += samples.row(i).transpose();
    mean /= static_cast<double>(s);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < s; ++i) {
        const Eigen::VectorXd x = samples.row(i).transpose() - mean;
        cov += x * x.transpose();
    }
    cov /= static_cast<double>(s);
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    jacobiEigenSymmetric(cov, values, vectors);
    if (variances) *variances = values.head(k);
    return vectors.leftCols(k).transpose();
}

double maxPrincipalAngle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    // Singular values of A B^T are the cosines of the principal angles.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a * b.transpose());
    const double cosMin = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
    return std::acos(cosMin);
}

Eigen::VectorXd naiveForward(const ConvNet& net, const MultiChannelImage& patchPixels) {
    // Interleaved activation buffer, plain loops throughout.
    int h = net.input.size, w = net.input.size, c = net.input.channels;
    std::vector<double> act(static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                act[(static_cast<std::size_t>(y) * w + x) * c + ch] = patchPixels.at(ch, y, x);

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        if (l.kind == LayerKind::Convolution) {
            const int oh = (h - l.kernel) / l.stride + 1;
            const int ow = (w - l.kernel) / l.stride + 1;
            std::vector<double> out(static_cast<std::size_t>(oh) * ow * l.units);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    for (int f = 0; f < l.units; ++f) {
                        double sum = net.biases[li](f);
                        for (int ky = 0; ky < l.kernel; ++ky)
                            for (int kx = 0; kx < l.kernel; ++kx)
                                for (int ch = 0; ch < c; ++ch) {
                                    const double v =
                                        act[(static_cast<std::size_t>(oy * l.stride + ky) * w +
                                             (ox * l.stride + kx)) * c + ch];
                                    sum += v * net.weights[li]((ky * l.kernel + kx) * c + ch, f);
                                }
                        out[(static_cast<std::size_t>(oy) * ow + ox) * l.units + f] = sum;
                    }
                }
            }
            act = std::move(out);
            h = oh;
            w = ow;
            c = l.units;
        } else if (l.kind == LayerKind::MaxPool) {
            const int oh = (h - l.kernel) / l.stride + 1;
            const int ow = (w - l.kernel) / l.stride + 1;
            std::vector<double> out(static_cast<std::size_t>(oh) * ow * c,
                                    -std::numeric_limits<double>::infinity());
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    for (int ch = 0; ch < c; ++ch)
                        for (int ky = 0; ky < l.kernel; ++ky)
                            for (int kx = 0; kx < l.kernel; ++kx) {
                                double& dst = out[(static_cast<std::size_t>(oy) * ow + ox) * c + ch];
                                dst = std::max(dst,
                                               act[(static_cast<std::size_t>(oy * l.stride + ky) * w +
                                                    (ox * l.stride + kx)) * c + ch]);
                            }
            act = std::move(out);
            h = oh;
            w = ow;
        } else if (l.kind == LayerKind::Relu) {
            for (double& v : act) v = std::max(v, 0.0);
        } else if (l.kind == LayerKind::Dropout) {
            // infer mode: identity
        } else {
            const int inDim = h * w * c;
            std::vector<double> out(static_cast<std::size_t>(l.units));
            for (int u = 0; u < l.units; ++u) {
                double sum = net.biases[li](u);
                for (int i = 0; i < inDim; ++i) sum += act[static_cast<std::size_t>(i)] * net.weights[li](i, u);
                out[static_cast<std::size_t>(u)] = sum;
            }
            act = std::move(out);
            h = 1;
            w = 1;
            c = l.units;
        }
    }
    Eigen::VectorXd result(static_cast<Eigen::Index>(act.size()));
    for (std::size_t i = 0; i < act.size(); ++i) result(static_cast<Eigen::Index>(i)) = act[i];
    return result;
}

double mseLoss(const RowMat& outputs, const RowMat& targets) {
    return (outputs - targets).squaredNorm() /
           (static_cast<double>(outputs.rows()) * static_cast<double>(outputs.cols()));
}

Gradients finiteDifferenceGradients(const ConvNet& net, const RowMat& inputs,
                                    const RowMat& targets, ForwardCache& cache, double step) {
    ConvNet probe = net;
    Gradients grads;
    grads.weights.resize(net.weights.size());
    grads.biases.resize(net.biases.size());
    auto evalLoss = [&probe, &inputs, &targets, &cache]() {
        const RowMat out = forwardBatch(probe, inputs, Mode::Train, nullptr, &cache, true);
        return mseLoss(out, targets);
    };
    for (std::size_t li = 0; li < net.weights.size(); ++li) {
        grads.weights[li] = Eigen::MatrixXd::Zero(net.weights[li].rows(), net.weights[li].cols());
        grads.biases[li] = Eigen::VectorXd::Zero(net.biases[li].size());
        for (Eigen::Index j = 0; j < net.weights[li].size(); ++j) {
            const double saved = probe.weights[li].data()[j];
            probe.weights[li].data()[j] = saved + step;
            const double up = evalLoss();
            probe.weights[li].data()[j] = saved - step;
            const double down = evalLoss();
            probe.weights[li].data()[j] = saved;
            grads.weights[li].data()[j] = (up - down) / (2.0 * step);
        }
        for (Eigen::Index j = 0; j < net.biases[li].size(); ++j) {
            const double saved = probe.biases[li](j);
            probe.biases[li](j) = saved + step;
            const double up = evalLoss();
            probe.biases[li](j) = saved - step;
            const double down = evalLoss();
            probe.biases[li](j) = saved;
            grads.biases[li](j) = (up - down) / (2.0 * step);
        }
    }
    return grads;
}

std::pair<std::size_t, double> bruteNearest(const Eigen::MatrixXd& codes,
                                            const Eigen::VectorXd& query) {
    std::size_t best = 0;
    double bestDist = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < codes.rows(); ++i) {
        const double d = (codes.row(i).transpose() - query).squaredNorm();
        if (d < bestDist) {
            bestDist = d;
            best = static_cast<std::size_t>(i);
        }
    }
    return {best, bestDist};
}

namespace {

bool kuhnAugment(int u, const std::vector<std::vector<int>>& adj, std::vector<int>& matchGt,
                 std::vector<char>& visited) {
    for (int v : adj[static_cast<std::size_t>(u)]) {
        if (visited[static_cast<std::size_t>(v)]) continue;
        visited[static_cast<std::size_t>(v)] = 1;
        if (matchGt[static_cast<std::size_t>(v)] < 0 ||
            kuhnAugment(matchGt[static_cast<std::size_t>(v)], adj, matchGt, visited)) {
            matchGt[static_cast<std::size_t>(v)] = u;
            return true;
        }
    }
    return false;
}

}  // namespace

std::size_t maxMatching(const std::vector<std::pair<int, int>>& pred,
                        const std::vector<std::pair<int, int>>& gt, double radius) {
    std::vector<std::vector<int>> adj(pred.size());
    const double r2 = radius * radius;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const double dy = pred[p].first - gt[g].first;
            const double dx = pred[p].second - gt[g].second;
            if (dy * dy + dx * dx <= r2) adj[p].push_back(static_cast<int>(g));
        }
    }
    std::vector<int> matchGt(gt.size(), -1);
    std::size_t matches = 0;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        std::vector<char> visited(gt.size(), 0);
        if (kuhnAugment(static_cast<int>(p), adj, matchGt, visited)) ++matches;
    }
    return matches;
}

namespace {

std::vector<double> ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&xs](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::vector<double> rx = ranks(xs);
    const std::vector<double> ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0 || dy == 0) return 0.0;
    return num / std::sqrt(dx * dy);
}

MultiChannelImage randomImage(RandomStream& rng, int channels, int height, int width) {
    MultiChannelImage img(channels, height, width);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

AnnotationPatch randomAnnotation(RandomStream& rng, int size, bool binary) {
    AnnotationPatch a(size);
    for (double& v : a.values) v = binary ? (rng.uniform() < 0.3 ? 1.0 : 0.0) : rng.uniform();
    return a;
}

}  // namespace n4::oracle
