#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "region_r1/crop_env.hpp"
#include "region_r1/errors.hpp"
#include "region_r1/policy.hpp"
#include "region_r1/scoring.hpp"

namespace region_r1 {

// One ingestion row: a query with its precomputed embeddings. region_embs
// carries crop embeddings produced upstream; image_w/image_h are required
// alongside it so area fractions stay well-defined.
struct PoolRecord {
    std::string query_id;
    Embedding query_emb;                    // FULL-image query embedding
    std::optional<Embedding> question_emb;  // defaults to query_emb when absent
    int image_w = 0;
    int image_h = 0;
    std::vector<std::pair<BBox, Embedding>> region_embs;
    CandidatePool candidates;

    bool has_positive() const {
        for (const auto& c : candidates)
            if (c.label == 1) return true;
        return false;
    }
};

namespace detail {

using json = nlohmann::json;

inline Embedding read_embedding(const json& value, std::size_t row, const std::string& field) {
    if (!value.is_array() || value.empty())
        throw SchemaError(row, field, "expected a non-empty number array");
    Embedding emb;
    emb.reserve(value.size());
    for (const auto& v : value) {
        if (!v.is_number()) throw SchemaError(row, field, "expected numbers");
        emb.push_back(v.get<double>());
    }
    return emb;
}

inline PoolRecord parse_pool_record(const json& obj, std::size_t row,
                                    std::optional<std::size_t>& dim) {
    if (!obj.is_object()) throw SchemaError(row, "<record>", "expected a JSON object");
    PoolRecord rec;

    if (!obj.contains("query_id") || !obj["query_id"].is_string())
        throw SchemaError(row, "query_id", "missing or not a string");
    rec.query_id = obj["query_id"].get<std::string>();

    if (!obj.contains("query_emb")) throw SchemaError(row, "query_emb", "missing");
    rec.query_emb = read_embedding(obj["query_emb"], row, "query_emb");
    if (!dim) dim = rec.query_emb.size();
    auto check_dim = [&](const Embedding& e, const std::string& field) {
        if (e.size() != *dim)
            throw DimensionMismatchError("row " + std::to_string(row) + ", " + field +
                                         ": dimension " + std::to_string(e.size()) +
                                         " != " + std::to_string(*dim));
    };
    check_dim(rec.query_emb, "query_emb");

    if (obj.contains("question_emb")) {
        rec.question_emb = read_embedding(obj["question_emb"], row, "question_emb");
        check_dim(*rec.question_emb, "question_emb");
    }

    if (obj.contains("region_embs")) {
        const auto& regions = obj["region_embs"];
        if (!regions.is_array()) throw SchemaError(row, "region_embs", "expected an array");
        if (!obj.contains("image_w") || !obj.contains("image_h") ||
            !obj["image_w"].is_number_integer() || !obj["image_h"].is_number_integer())
            throw SchemaError(row, "image_w/image_h",
                              "required integers when region_embs is present");
        rec.image_w = obj["image_w"].get<int>();
        rec.image_h = obj["image_h"].get<int>();
        for (const auto& entry : regions) {
            if (!entry.is_object() || !entry.contains("box") || !entry.contains("emb") ||
                !entry["box"].is_array() || entry["box"].size() != 4)
                throw SchemaError(row, "region_embs", "entries need box [x1,y1,x2,y2] and emb");
            BBox box{entry["box"][0].get<int>(), entry["box"][1].get<int>(),
                     entry["box"][2].get<int>(), entry["box"][3].get<int>()};
            Embedding emb = read_embedding(entry["emb"], row, "region_embs.emb");
            check_dim(emb, "region_embs.emb");
            rec.region_embs.emplace_back(box, std::move(emb));
        }
    }

    if (!obj.contains("candidates") || !obj["candidates"].is_array() ||
        obj["candidates"].empty())
        throw SchemaError(row, "candidates", "missing or empty");
    for (const auto& cand : obj["candidates"]) {
        Candidate c;
        if (!cand.is_object()) throw SchemaError(row, "candidates", "expected objects");
        if (!cand.contains("id") || !cand["id"].is_string())
            throw SchemaError(row, "candidates.id", "missing or not a string");
        c.id = cand["id"].get<std::string>();
        if (!cand.contains("image_emb")) throw SchemaError(row, "candidates.image_emb", "missing");
        c.image_emb = read_embedding(cand["image_emb"], row, "candidates.image_emb");
        check_dim(c.image_emb, "candidates.image_emb");
        if (cand.contains("text_emb") && !cand["text_emb"].is_null()) {
            c.text_emb = read_embedding(cand["text_emb"], row, "candidates.text_emb");
            check_dim(*c.text_emb, "candidates.text_emb");
        }
        if (!cand.contains("label") || !cand["label"].is_number_integer())
            throw SchemaError(row, "candidates.label", "missing or not an integer");
        c.label = cand["label"].get<int>();
        if (c.label != 0 && c.label != 1)
            throw SchemaError(row, "candidates.label", "labels must be 0 or 1");
        rec.candidates.push_back(std::move(c));
    }
    if (rec.candidates.size() < 2)
        throw SchemaError(row, "candidates", "pool needs at least 2 candidates");
    std::set<std::string> ids;
    for (const auto& c : rec.candidates)
        if (!ids.insert(c.id).second)
            throw SchemaError(row, "candidates.id", "duplicate id: " + c.id);
    return rec;
}

inline json dump_embedding(const Embedding& e) { return json(e); }

}  // namespace detail

// Newline-delimited JSON, one PoolRecord per line.
inline std::vector<PoolRecord> load_pools(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<PoolRecord> records;
    std::optional<std::size_t> dim;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto obj = detail::json::parse(line, nullptr, false);
        if (obj.is_discarded()) throw SchemaError(row, "<record>", "invalid JSON");
        records.push_back(detail::parse_pool_record(obj, row, dim));
    }
    if (records.empty()) throw EmptyDatasetError("dataset is empty: " + path);
    return records;
}

inline detail::json to_json(const PoolRecord& rec) {
    detail::json obj;
    obj["query_id"] = rec.query_id;
    obj["query_emb"] = detail::dump_embedding(rec.query_emb);
    if (rec.question_emb) obj["question_emb"] = detail::dump_embedding(*rec.question_emb);
    if (!rec.region_embs.empty()) {
        obj["image_w"] = rec.image_w;
        obj["image_h"] = rec.image_h;
        auto regions = detail::json::array();
        for (const auto& [box, emb] : rec.region_embs) {
            detail::json entry;
            entry["box"] = {box.x1, box.y1, box.x2, box.y2};
            entry["emb"] = detail::dump_embedding(emb);
            regions.push_back(std::move(entry));
        }
        obj["region_embs"] = std::move(regions);
    }
    auto cands = detail::json::array();
    for (const auto& c : rec.candidates) {
        detail::json cand;
        cand["id"] = c.id;
        cand["image_emb"] = detail::dump_embedding(c.image_emb);
        if (c.text_emb) cand["text_emb"] = detail::dump_embedding(*c.text_emb);
        cand["label"] = c.label;
        cands.push_back(std::move(cand));
    }
    obj["candidates"] = std::move(cands);
    return obj;
}

inline void save_pools(const std::vector<PoolRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset: " + path);
    for (const auto& rec : records) out << to_json(rec).dump() << "\n";
}

// Re-ranking cannot recover missing positives, so training keeps only pools
// that contain at least one. Returns (kept, dropped count).
inline std::pair<std::vector<PoolRecord>, std::size_t> filter_training_pools(
    std::vector<PoolRecord> records) {
    std::vector<PoolRecord> kept;
    kept.reserve(records.size());
    std::size_t dropped = 0;
    for (auto& rec : records) {
        if (rec.has_positive())
            kept.push_back(std::move(rec));
        else
            ++dropped;
    }
    return {std::move(kept), dropped};
}

// Ingested rows carry no separate question encoder output, so the FULL-image
// query embedding stands in for the question vector unless question_emb is set.
inline QueryContext make_context(const PoolRecord& rec) {
    QueryContext ctx;
    ctx.id = rec.query_id;
    ctx.image_width = rec.image_w;
    ctx.image_height = rec.image_h;
    ctx.full_query = normalize(rec.query_emb);
    ctx.question_vec = rec.question_emb ? normalize(*rec.question_emb) : ctx.full_query;
    ctx.boxes.reserve(rec.region_embs.size());
    ctx.box_query.reserve(rec.region_embs.size());
    for (const auto& [box, emb] : rec.region_embs) {
        ctx.boxes.push_back(box);
        ctx.box_query.push_back(normalize_or_zero(emb));
    }
    ctx.cand_units.reserve(rec.candidates.size());
    for (const auto& cand : rec.candidates) {
        ctx.cand_units.push_back(fuse_candidate(cand));
        ctx.labels.push_back(cand.label);
    }
    ctx.features.resize(ctx.n_actions() * kFeatureDim);
    for (std::size_t i = 0; i < ctx.n_actions(); ++i)
        detail::fill_feature_row(ctx.features.data() + i * kFeatureDim, ctx.question_vec,
                                 i == 0 ? ctx.full_query : ctx.box_query[i - 1],
                                 ctx.area_fraction(i), i == 0);
    ctx.base = ctx.outcome(0);
    return ctx;
}

// Synthetic instances exported through the same schema the loader reads, so
// the generated and ingested paths share all downstream code.
inline PoolRecord to_pool_record(const SyntheticInstance& inst, const AnchorSet& anchors) {
    PoolRecord rec;
    rec.query_id = "q" + std::to_string(inst.seed);
    rec.query_emb = embed_image(inst.image);
    rec.question_emb = inst.question_vec;
    rec.image_w = inst.image.width;
    rec.image_h = inst.image.height;
    rec.region_embs.reserve(anchors.boxes.size());
    for (const auto& box : anchors.boxes)
        rec.region_embs.emplace_back(box, embed_image_or_zero(crop(inst.image, box)));
    rec.candidates = inst.pool;
    return rec;
}

}  // namespace region_r1
