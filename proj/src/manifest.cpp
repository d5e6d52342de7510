#include "impure/manifest.hpp"

#include <nlohmann/json.hpp>

namespace impure {

using json = nlohmann::json;

namespace {
json attack_to_json(const AttackMeta& a) {
    return json{{"tag", a.tag},
                {"method", a.method},
                {"epsilon", a.epsilon},
                {"alpha", a.alpha},
                {"steps", a.steps},
                {"random_start", a.random_start},
                {"momentum_decay", a.momentum_decay},
                {"seed", a.seed}};
}

AttackMeta attack_from_json(const json& j) {
    AttackMeta a;
    a.tag = j.at("tag").get<std::string>();
    a.method = j.at("method").get<std::string>();
    a.epsilon = j.at("epsilon").get<double>();
    a.alpha = j.value("alpha", 0.0);
    a.steps = j.value("steps", 0);
    a.random_start = j.value("random_start", false);
    a.momentum_decay = j.value("momentum_decay", 0.0);
    a.seed = j.value("seed", uint64_t(0));
    return a;
}
}  // namespace

void DatasetManifest::save(const std::filesystem::path& path) const {
    json j;
    j["split"] = split;
    j["image_h"] = image_h;
    j["image_w"] = image_w;
    j["class_names"] = class_names;
    json es = json::array();
    for (const auto& e : entries) {
        json je{{"path", e.rel_path}, {"label", e.label}, {"class", e.class_name}};
        if (!e.adv_paths.empty()) je["adv"] = e.adv_paths;
        es.push_back(std::move(je));
    }
    j["entries"] = std::move(es);
    json as = json::array();
    for (const auto& [tag, meta] : attacks) as.push_back(attack_to_json(meta));
    j["attacks"] = std::move(as);
    j["notes"] = notes;
    write_text_file_atomic(path, j.dump(2) + "\n");
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw DecodeError("bad manifest json: " + path.string());
    DatasetManifest m;
    m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    m.split = j.at("split").get<std::string>();
    m.image_h = j.at("image_h").get<int>();
    m.image_w = j.at("image_w").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.rel_path = je.at("path").get<std::string>();
        e.label = je.at("label").get<int>();
        e.class_name = je.at("class").get<std::string>();
        if (je.contains("adv")) e.adv_paths = je.at("adv").get<std::map<std::string, std::string>>();
        m.entries.push_back(std::move(e));
    }
    for (const auto& ja : j.value("attacks", json::array()))
        m.attacks.emplace(ja.at("tag").get<std::string>(), attack_from_json(ja));
    m.notes = j.value("notes", std::vector<std::string>{});
    return m;
}

std::vector<std::string> DatasetManifest::missing_files() const {
    std::vector<std::string> missing;
    for (const auto& e : entries) {
        if (!std::filesystem::exists(resolve(e.rel_path))) missing.push_back(e.rel_path);
        for (const auto& [tag, rel] : e.adv_paths)
            if (!std::filesystem::exists(resolve(rel))) missing.push_back(rel);
    }
    return missing;
}

}  // namespace impure
