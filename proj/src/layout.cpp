#include "isoguide/layout.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "isoguide/errors.hpp"

namespace isoguide {
namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

int round_half_up_mid(int a, int b) {
    // floor((a + b) / 2 + 1/2) without going through floating point.
    const int s = a + b + 1;
    return s >= 0 ? s / 2 : -((-s + 1) / 2);
}

}  // namespace

void validate_bbox(const BBox& b, int height, int width) {
    if (!(b.x0 < b.x1 && b.y0 < b.y1)) throw LayoutError("bbox must satisfy x0 < x1 and y0 < y1");
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > width || b.y1 > height) {
        throw LayoutError("bbox [" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                          std::to_string(b.x1) + "," + std::to_string(b.y1) + "] exceeds image " +
                          std::to_string(width) + "x" + std::to_string(height));
    }
}

void validate_detection(const Detection& d, int height, int width) {
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
        throw LayoutError("detection confidence must be in [0,1]");
    }
    validate_bbox(d.bbox, height, width);
}

Point bbox_center(const BBox& b) {
    return {round_half_up_mid(b.x0, b.x1), round_half_up_mid(b.y0, b.y1)};
}

Point bbox_center(const BBox& b, int height, int width) {
    Point p = bbox_center(b);
    p.x = std::clamp(p.x, 0, width - 1);
    p.y = std::clamp(p.y, 0, height - 1);
    return p;
}

Mask rasterize_bbox(const BBox& b, int height, int width) {
    validate_bbox(b, height, width);
    Mask m(height, width, false);
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) m.set(y, x, true);
    return m;
}

void BleedPolicy::validate() const {
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) {
        throw ValidationError("confidence threshold must be in (0,1)");
    }
}

std::string to_string(BleedReason r) {
    switch (r) {
        case BleedReason::missing_label: return "missing label";
        case BleedReason::low_confidence: return "low confidence";
        case BleedReason::extra_subject: return "extra subject";
    }
    return "?";
}

std::string BleedVerdict::summary() const {
    if (consistent && findings.empty()) return "consistent";
    std::ostringstream os;
    os << (consistent ? "consistent" : "bleeding");
    for (std::size_t i = 0; i < findings.size(); ++i) {
        os << (i == 0 ? ": " : "; ") << to_string(findings[i].reason) << " \"" << findings[i].label << "\"";
    }
    return os.str();
}

BleedVerdict bleed_check(const std::vector<Detection>& detections, const BleedPolicy& policy) {
    policy.validate();
    std::map<std::string, int> expected;
    for (const auto& l : policy.expected_labels) ++expected[lower(l)];

    std::map<std::string, std::vector<double>> by_label;
    for (const auto& d : detections) by_label[lower(d.label)].push_back(d.confidence);
    for (auto& [_, v] : by_label) std::sort(v.begin(), v.end(), std::greater<>());

    BleedVerdict verdict;
    std::vector<BleedFinding> low;
    for (const auto& [label, need] : expected) {
        const auto it = by_label.find(label);
        const auto& confs = it == by_label.end() ? std::vector<double>{} : it->second;
        if (static_cast<int>(confs.size()) < need) {
            verdict.findings.push_back({BleedReason::missing_label, label});
            continue;
        }
        // The `need` most confident detections are the ones that count.
        if (confs[static_cast<std::size_t>(need - 1)] < policy.confidence_threshold) {
            low.push_back({BleedReason::low_confidence, label});
        }
    }
    verdict.findings.insert(verdict.findings.end(), low.begin(), low.end());
    verdict.consistent = verdict.findings.empty();

    for (const auto& [label, confs] : by_label) {
        const auto it = expected.find(label);
        const std::size_t used = it == expected.end() ? 0 : static_cast<std::size_t>(it->second);
        for (std::size_t i = used; i < confs.size(); ++i) {
            if (confs[i] >= policy.confidence_threshold) {
                verdict.findings.push_back({BleedReason::extra_subject, label});
                break;
            }
        }
    }
    return verdict;
}

std::vector<Mask> resolve_overlaps(const std::vector<Mask>& masks,
                                   const std::vector<std::size_t>& priority) {
    if (masks.empty()) return {};
    const int h = masks.front().height(), w = masks.front().width();
    for (const auto& m : masks) {
        if (m.height() != h || m.width() != w) throw ShapeError("resolve_overlaps: mask dims differ");
    }
    std::vector<std::size_t> order = priority;
    if (order.empty()) {
        order.resize(masks.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    {
        std::vector<std::size_t> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> expect(masks.size());
        std::iota(expect.begin(), expect.end(), std::size_t{0});
        if (sorted != expect) throw ValidationError("resolve_overlaps: priority must be a permutation");
    }
    std::vector<Mask> out(masks.size(), Mask(h, w, false));
    Mask claimed(h, w, false);
    for (std::size_t idx : order) {
        const Mask& m = masks[idx];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (m(y, x) && !claimed(y, x)) {
                    out[idx].set(y, x, true);
                    claimed.set(y, x, true);
                }
            }
        }
    }
    return out;
}

std::vector<std::size_t> confidence_priority(const std::vector<Detection>& detections) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });
    return order;
}

Mask SubjectLayout::union_mask() const {
    if (subjects.empty()) throw LayoutError("layout has no subjects");
    Mask u(subjects.front().mask.height(), subjects.front().mask.width(), false);
    for (const auto& s : subjects) u = u | s.mask;
    return u;
}

void SubjectLayout::validate(const Shape& latent_shape, std::size_t n_subjects) const {
    if (subjects.empty()) throw LayoutError("layout has no subjects");
    if (subjects.size() != n_subjects) {
        throw LayoutError("layout has " + std::to_string(subjects.size()) + " masks for " +
                          std::to_string(n_subjects) + " subjects");
    }
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto& s = subjects[i];
        if (s.subject != i) throw LayoutError("layout subjects must be ordered by subject index");
        require_mask_fits(s.mask, latent_shape, "layout");
        if (s.mask.none()) throw LayoutError("mask for subject " + std::to_string(i) + " is empty");
        for (std::size_t j = i + 1; j < subjects.size(); ++j) {
            if (!(s.mask & subjects[j].mask).none()) {
                throw LayoutError("masks of subjects " + std::to_string(i) + " and " +
                                  std::to_string(j) + " overlap");
            }
        }
    }
}

AssignmentOverride parse_assignment(const std::string& text) {
    AssignmentOverride out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ValidationError("assignment '" + item + "' is not i:j");
        try {
            std::size_t pos_a = 0, pos_b = 0;
            const std::string a = item.substr(0, colon), b = item.substr(colon + 1);
            const long i = std::stol(a, &pos_a), j = std::stol(b, &pos_b);
            if (pos_a != a.size() || pos_b != b.size() || i < 0 || j < 0) throw std::invalid_argument("x");
            out.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        } catch (const std::logic_error&) {
            throw ValidationError("assignment '" + item + "' is not a pair of non-negative integers");
        }
        for (std::size_t k = 0; k + 1 < out.size(); ++k) {
            if (out[k].first == out.back().first || out[k].second == out.back().second) {
                throw ValidationError("assignment '" + item + "' reuses a subject or mask index");
            }
        }
    }
    return out;
}

namespace {

SubjectLayout finish_layout(const std::vector<Mask>& masks, std::vector<std::size_t> chosen,
                            const std::vector<std::size_t>& priority) {
    // Resolve overlaps among the chosen masks only.
    std::vector<Mask> picked;
    for (auto idx : chosen) picked.push_back(masks[idx]);
    std::vector<std::size_t> local_priority;
    for (auto src : priority) {
        for (std::size_t s = 0; s < chosen.size(); ++s) {
            if (chosen[s] == src) local_priority.push_back(s);
        }
    }
    const auto resolved = resolve_overlaps(picked, local_priority);
    SubjectLayout layout;
    for (std::size_t s = 0; s < chosen.size(); ++s) {
        if (resolved[s].none()) {
            throw LayoutError("mask " + std::to_string(chosen[s]) + " assigned to subject " +
                              std::to_string(s) + " is empty after overlap resolution");
        }
        layout.subjects.push_back({s, chosen[s], resolved[s]});
    }
    return layout;
}

void apply_override(const AssignmentOverride& pairs, std::size_t n_subjects, std::size_t n_masks,
                    std::vector<std::optional<std::size_t>>& chosen, std::vector<bool>& used) {
    for (const auto& [s, m] : pairs) {
        if (s >= n_subjects) throw ValidationError("assignment subject index " + std::to_string(s) + " out of range");
        if (m >= n_masks) throw ValidationError("assignment mask index " + std::to_string(m) + " out of range");
        if (chosen[s]) throw ValidationError("subject " + std::to_string(s) + " assigned twice");
        if (used[m]) throw ValidationError("mask " + std::to_string(m) + " assigned twice");
        chosen[s] = m;
        used[m] = true;
    }
}

}  // namespace

SubjectLayout assign_masks(const std::vector<Detection>& detections, const std::vector<Mask>& masks,
                           const std::vector<std::string>& subject_prompts,
                           const AssignmentOverride& override_pairs) {
    if (detections.size() != masks.size()) {
        throw ValidationError("assign_masks: one mask per detection required");
    }
    if (subject_prompts.empty()) throw LayoutError("assign_masks: no subjects");
    if (masks.size() < subject_prompts.size()) {
        throw LayoutError("assign_masks: " + std::to_string(masks.size()) + " masks for " +
                          std::to_string(subject_prompts.size()) + " subjects");
    }
    std::vector<std::optional<std::size_t>> chosen(subject_prompts.size());
    std::vector<bool> used(masks.size(), false);
    apply_override(override_pairs, subject_prompts.size(), masks.size(), chosen, used);

    const auto priority = confidence_priority(detections);
    for (std::size_t s = 0; s < subject_prompts.size(); ++s) {
        if (chosen[s]) continue;
        const std::string prompt = lower(subject_prompts[s]);
        for (auto d : priority) {
            if (used[d]) continue;
            const std::string label = lower(detections[d].label);
            if (!label.empty() && prompt.find(label) != std::string::npos) {
                chosen[s] = d;
                used[d] = true;
                break;
            }
        }
        if (!chosen[s]) {
            throw LayoutError("no detection matches subject prompt \"" + subject_prompts[s] +
                              "\"; pass an explicit assignment (--assign subject:mask)");
        }
    }
    std::vector<std::size_t> picked;
    for (const auto& c : chosen) picked.push_back(*c);
    return finish_layout(masks, picked, priority);
}

SubjectLayout layout_from_masks(const std::vector<Mask>& masks, std::size_t n_subjects,
                                const AssignmentOverride& override_pairs) {
    if (n_subjects == 0) throw LayoutError("layout_from_masks: no subjects");
    if (masks.size() < n_subjects) {
        throw LayoutError(std::to_string(masks.size()) + " masks for " + std::to_string(n_subjects) +
                          " subjects");
    }
    std::vector<std::optional<std::size_t>> chosen(n_subjects);
    std::vector<bool> used(masks.size(), false);
    apply_override(override_pairs, n_subjects, masks.size(), chosen, used);
    std::size_t next = 0;
    for (auto& c : chosen) {
        if (c) continue;
        while (used[next]) ++next;
        c = next;
        used[next] = true;
    }
    std::vector<std::size_t> picked;
    for (const auto& c : chosen) picked.push_back(*c);
    std::vector<std::size_t> priority(masks.size());
    std::iota(priority.begin(), priority.end(), std::size_t{0});
    return finish_layout(masks, picked, priority);
}

}  // namespace isoguide
