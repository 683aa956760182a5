#include "silicon/report.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace silicon {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::optional<StainVectors> try_stains(const RgbImage& img) {
    try {
        return estimate_stain_vectors(img);
    } catch (const NoTissueError&) {
        return std::nullopt;
    }
}

void accumulate(SegScores& acc, const SegScores& s, double w) {
    acc.dice += w * s.dice;
    acc.jaccard += w * s.jaccard;
    acc.precision += w * s.precision;
    acc.recall += w * s.recall;
}

std::optional<StainSd> group_sd(const std::vector<std::optional<StainVectors>>& v) {
    std::vector<StainVectors> ok;
    for (const auto& s : v)
        if (s) ok.push_back(*s);
    if (ok.size() < 2) return std::nullopt;
    return stain_vector_sd(ok);
}

}  // namespace

EvalReport evaluate(const std::vector<EvalSample>& samples, const RgbImage& tmpl, const InferenceNets& nets,
                    double threshold, const InferenceOptions& opt, const BinaryMask* template_mask) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    EvalReport rep;
    {
        SegMap tm = segment_map(tmpl, nets, opt);
        const BinaryMask mask = template_mask ? *template_mask : tm.binarize(threshold);
        rep.template_nmi = mask.count() > 0 ? nmi(tmpl, mask) : kNaN;
    }

    std::vector<RgbImage> sources;
    for (const auto& s : samples) sources.push_back(s.image);
    const auto results = normalize_and_segment(tmpl, sources, nets, opt);

    const double w = 1.0 / static_cast<double>(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const EvalSample& s = samples[i];
        ImageEval e;
        e.id = s.id;
        e.group = s.group;
        e.seg_source = dice_jaccard_prec_rec(segment_map(s.image, nets, opt).binarize(threshold), s.truth);
        e.seg_normalized = dice_jaccard_prec_rec(results[i].final_segmap.binarize(threshold), s.truth);
        if (s.truth.count() > 0) {
            e.nmi_pre = nmi(s.image, s.truth);
            e.nmi_post = nmi(results[i].normalized_image, s.truth);
        } else {
            e.nmi_pre = e.nmi_post = kNaN;
        }
        const bool have_t = std::isfinite(rep.template_nmi) && std::isfinite(e.nmi_pre) && e.nmi_post > 0;
        e.bicc_pre = have_t ? bicc(e.nmi_pre, rep.template_nmi) : kNaN;
        e.bicc_post = have_t ? bicc(e.nmi_post, rep.template_nmi) : kNaN;
        e.stains_pre = try_stains(s.image);
        e.stains_post = try_stains(results[i].normalized_image);
        accumulate(rep.mean_source, e.seg_source, w);
        accumulate(rep.mean_normalized, e.seg_normalized, w);
        rep.images.push_back(std::move(e));
    }

    std::map<int, std::vector<const ImageEval*>> by_group;
    for (const auto& e : rep.images) by_group[e.group].push_back(&e);
    double sd_pre = 0, sd_post = 0;
    int sd_groups = 0;
    for (const auto& [g, members] : by_group) {
        GroupEval ge;
        ge.group = g;
        ge.count = static_cast<int>(members.size());
        std::vector<double> pre, post;
        std::vector<std::optional<StainVectors>> spre, spost;
        for (const auto* m : members) {
            if (std::isfinite(m->nmi_pre) && std::isfinite(m->nmi_post)) {
                pre.push_back(m->nmi_pre);
                post.push_back(m->nmi_post);
            }
            spre.push_back(m->stains_pre);
            spost.push_back(m->stains_post);
        }
        ge.wscc_pre = pre.empty() ? kNaN : wscc(pre);
        ge.wscc_post = post.empty() ? kNaN : wscc(post);
        ge.sd_pre = group_sd(spre);
        ge.sd_post = group_sd(spost);
        if (ge.sd_pre && ge.sd_post) {
            sd_pre += ge.sd_pre->mean();
            sd_post += ge.sd_post->mean();
            ++sd_groups;
        }
        rep.mean_wscc_pre += ge.wscc_pre / static_cast<double>(by_group.size());
        rep.mean_wscc_post += ge.wscc_post / static_cast<double>(by_group.size());
        rep.groups.push_back(ge);
    }
    rep.mean_sd_pre = sd_groups ? sd_pre / sd_groups : kNaN;
    rep.mean_sd_post = sd_groups ? sd_post / sd_groups : kNaN;

    std::vector<double> bpre, bpost;
    for (const auto& e : rep.images)
        if (std::isfinite(e.bicc_pre) && std::isfinite(e.bicc_post)) {
            bpre.push_back(e.bicc_pre);
            bpost.push_back(e.bicc_post);
        }
    rep.p_paired_t = rep.p_wilcoxon = kNaN;
    if (bpre.size() >= 5) {
        rep.p_paired_t = paired_t(bpost, bpre);
        bool any_diff = false;
        for (std::size_t i = 0; i < bpre.size(); ++i) any_diff |= bpre[i] != bpost[i];
        if (any_diff) rep.p_wilcoxon = wilcoxon_signed_rank(bpost, bpre);
    }
    return rep;
}

std::string EvalReport::metrics_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "id,group,dice,jaccard,precision,recall,dice_norm,jaccard_norm,precision_norm,recall_norm,"
          "nmi_pre,nmi_post,bicc_pre,bicc_post\n";
    for (const auto& e : images) {
        os << e.id << ',' << e.group << ',' << e.seg_source.dice << ',' << e.seg_source.jaccard << ','
           << e.seg_source.precision << ',' << e.seg_source.recall << ',' << e.seg_normalized.dice << ','
           << e.seg_normalized.jaccard << ',' << e.seg_normalized.precision << ',' << e.seg_normalized.recall << ','
           << e.nmi_pre << ',' << e.nmi_post << ',' << e.bicc_pre << ',' << e.bicc_post << '\n';
    }
    return os.str();
}

std::string EvalReport::summary() const {
    std::ostringstream os;
    os.precision(10);
    os << "# bicc = min/max NMI ratio; wscc = max(0, 1 - sd/mean) of NMI within a group (lab definitions)\n";
    os << "images = " << images.size() << '\n'
       << "template_nmi = " << template_nmi << '\n'
       << "dice = " << mean_source.dice << '\n'
       << "jaccard = " << mean_source.jaccard << '\n'
       << "precision = " << mean_source.precision << '\n'
       << "recall = " << mean_source.recall << '\n'
       << "dice_normalized = " << mean_normalized.dice << '\n'
       << "jaccard_normalized = " << mean_normalized.jaccard << '\n'
       << "precision_normalized = " << mean_normalized.precision << '\n'
       << "recall_normalized = " << mean_normalized.recall << '\n'
       << "wscc_pre = " << mean_wscc_pre << '\n'
       << "wscc_post = " << mean_wscc_post << '\n'
       << "stain_sd_pre = " << mean_sd_pre << '\n'
       << "stain_sd_post = " << mean_sd_post << '\n'
       << "p_paired_t_bicc = " << p_paired_t << '\n'
       << "p_wilcoxon_bicc = " << p_wilcoxon << '\n';
    for (const auto& g : groups) {
        os << "group." << g.group << ".count = " << g.count << '\n'
           << "group." << g.group << ".wscc_pre = " << g.wscc_pre << '\n'
           << "group." << g.group << ".wscc_post = " << g.wscc_post << '\n';
        if (g.sd_pre && g.sd_post) {
            const auto put = [&](const char* tag, const StainSd& sd) {
                os << "group." << g.group << ".stain_sd_" << tag << " = " << sd.h[0] << ' ' << sd.h[1] << ' ' << sd.h[2]
                   << ' ' << sd.e[0] << ' ' << sd.e[1] << ' ' << sd.e[2] << '\n';
            };
            put("pre", *g.sd_pre);
            put("post", *g.sd_post);
        }
    }
    return os.str();
}

}  // namespace silicon
