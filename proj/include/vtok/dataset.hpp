#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vtok/error.hpp"
#include "vtok/rng.hpp"
#include "vtok/tasks.hpp"

// JSONL task files and the three-way split builder. Scenes are stored
// symbolically; clips are re-rendered on load, so files stay small and
// ground truth stays exact.
namespace vtok {

inline Json task_to_json(const TaskTriplet& t) {
    Json j;
    j["category"] = category_name(t.category);
    j["prompt"] = t.prompt;
    j["question"] = t.question;
    j["choices"] = t.choices;
    j["answer"] = t.answer;
    j["scene"] = scene_to_json(t.scene);
    return j;
}

inline TaskTriplet task_from_json(const Json& j) {
    TaskTriplet t;
    try {
        t.category = category_from_name(j.at("category").get<std::string>());
        t.prompt = j.at("prompt").get<std::string>();
        t.question = j.at("question").get<std::string>();
        t.choices = j.at("choices").get<std::vector<std::string>>();
        t.answer = j.at("answer").get<int>();
        t.scene = scene_from_json(j.at("scene"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed task record: ") + e.what());
    }
    if (t.choices.size() != 4) throw ConfigError("task record must have exactly 4 choices");
    if (t.answer < 0 || t.answer >= 4) throw ConfigError("task answer index out of range");
    return t;
}

inline void save_tasks(const std::string& path, const std::vector<TaskTriplet>& tasks) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& t : tasks) out << task_to_json(t).dump() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

inline std::vector<TaskTriplet> load_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open task file: " + path);
    std::vector<TaskTriplet> tasks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        tasks.push_back(task_from_json(j));
    }
    return tasks;
}

// One task per (split-offset) seed, categories round-robin so counts per
// category differ by at most one.
inline std::vector<TaskTriplet> build_suite(std::size_t count, std::uint64_t base_seed) {
    if (count < 1) throw ConfigError("build_suite: requested size must be >= 1");
    std::vector<TaskTriplet> tasks;
    tasks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Category cat = all_categories()[i % all_categories().size()];
        const std::uint64_t seed = base_seed + i;
        Rng rng = Rng(seed).child(0xdadd1e);
        TaskTriplet t = sample_task(cat, rng);
        t.scene.seed = seed;
        tasks.push_back(std::move(t));
    }
    return tasks;
}

struct DatasetSizes {
    std::size_t train{64};
    std::size_t val{28};
    std::size_t test{700};
};

// Split seed ranges are far apart so no scene seed can appear twice.
inline constexpr std::uint64_t split_offset(int split) { return static_cast<std::uint64_t>(split) * 1000000ull; }

inline void build_dataset(const std::string& out_dir, const DatasetSizes& sizes, std::uint64_t seed) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());
    save_tasks((fs::path(out_dir) / "train.jsonl").string(), build_suite(sizes.train, seed + split_offset(0)));
    save_tasks((fs::path(out_dir) / "val.jsonl").string(), build_suite(sizes.val, seed + split_offset(1)));
    save_tasks((fs::path(out_dir) / "test.jsonl").string(), build_suite(sizes.test, seed + split_offset(2)));
}

} // namespace vtok
