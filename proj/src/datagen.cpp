#include "radpo/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace radpo::datagen {

void TaskSpec::validate() const {
    vocab.validate();
    if (window < 1) throw std::invalid_argument("TaskSpec: window must be >= 1");
    if (prompt_len < 0)
        throw std::invalid_argument("TaskSpec: prompt_len must be >= 0");
    if (response_len < 1)
        throw std::invalid_argument("TaskSpec: response_len must be >= 1");
    if (token_score.size() !=
        static_cast<size_t>(contexts()) * vocab.size)
        throw std::invalid_argument("TaskSpec: score table size mismatch");
    for (double s : token_score)
        if (!std::isfinite(s))
            throw std::invalid_argument("TaskSpec: non-finite score");
}

int TaskSpec::contexts() const {
    int n = 1;
    for (int i = 0; i < window; ++i) n *= vocab.size;
    return n;
}

double TaskSpec::response_reward(const policy::TokenSeq& prompt,
                                 const policy::TokenSeq& response) const {
    policy::TokenSeq stream = prompt;
    double total = 0.0;
    for (int tok : response) {
        if (tok < 0 || tok >= vocab.size)
            throw std::out_of_range("response_reward: token id out of range");
        int row = policy::context_row(vocab, window, stream);
        total += token_score[static_cast<size_t>(row) * vocab.size + tok];
        stream.push_back(tok);
    }
    return total;
}

TaskSpec gen_task(uint64_t seed, policy::VocabSpec vocab, int window,
                  int prompt_len, int response_len, double score_scale) {
    if (!(score_scale > 0.0))
        throw std::invalid_argument("gen_task: score_scale must be > 0");
    TaskSpec task;
    task.vocab = vocab;
    task.window = window;
    task.prompt_len = prompt_len;
    task.response_len = response_len;
    task.seed = seed;
    task.token_score.resize(static_cast<size_t>(task.contexts()) * vocab.size);
    Rng rng(seed);
    for (double& s : task.token_score)
        s = rng.uniform(-score_scale, score_scale);
    for (int row = 0; row < task.contexts(); ++row)
        task.token_score[static_cast<size_t>(row) * vocab.size +
                         vocab.eos_id] = 0.0;
    task.validate();
    return task;
}

bool bt_label(double reward_first, double reward_second, Rng& rng) {
    if (!std::isfinite(reward_first) || !std::isfinite(reward_second))
        throw std::invalid_argument("bt_label: non-finite reward");
    return rng.uniform() < sigmoid(reward_first - reward_second);
}

Dataset sample_dataset(const TaskSpec& task,
                       const policy::TabularPolicy& ref_policy, int n_pairs,
                       uint64_t seed) {
    task.validate();
    if (ref_policy.vocab.size != task.vocab.size)
        throw std::invalid_argument("sample_dataset: vocab size mismatch");
    if (n_pairs < 0)
        throw std::invalid_argument("sample_dataset: n_pairs must be >= 0");

    std::vector<int> prompt_tokens;
    for (int t = 0; t < task.vocab.size; ++t)
        if (t != task.vocab.bos_id && t != task.vocab.eos_id)
            prompt_tokens.push_back(t);
    if (task.prompt_len > 0 && prompt_tokens.empty())
        throw std::invalid_argument("sample_dataset: no non-reserved tokens");

    Dataset out(n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
        policy::TokenSeq prompt(task.prompt_len);
        for (int& tok : prompt)
            tok = prompt_tokens[rng.uniform_int(
                static_cast<int>(prompt_tokens.size()))];
        auto first =
            ref_policy.sample_response(rng, prompt, task.response_len);
        policy::TokenSeq second;
        int tries = 0;
        do {
            second =
                ref_policy.sample_response(rng, prompt, task.response_len);
        } while (second == first && ++tries < 100);
        if (second == first)
            throw std::runtime_error(
                "sample_dataset: could not draw distinct responses");
        double r1 = task.response_reward(prompt, first);
        double r2 = task.response_reward(prompt, second);
        bool first_chosen = bt_label(r1, r2, rng);
        out[i].prompt = std::move(prompt);
        out[i].chosen = first_chosen ? first : second;
        out[i].rejected = first_chosen ? second : first;
    }
    return out;
}

namespace {

policy::TokenSeq parse_token_field(const std::string& field, int vocab_size,
                                   int line_no) {
    policy::TokenSeq tokens;
    std::istringstream in(field);
    std::string word;
    while (in >> word) {
        size_t used = 0;
        int tok;
        try {
            tok = std::stoi(word, &used);
        } catch (const std::exception&) {
            used = 0;
            tok = -1;
        }
        if (used != word.size() || tok < 0 || tok >= vocab_size)
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": bad token id '" + word + "'");
        tokens.push_back(tok);
    }
    return tokens;
}

}  // namespace

Dataset read_dataset(const std::filesystem::path& path,
                     const policy::VocabSpec& vocab) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read dataset: " + path.string());
    Dataset out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        size_t p1 = line.find('|');
        size_t p2 = p1 == std::string::npos ? p1 : line.find('|', p1 + 1);
        if (p2 == std::string::npos ||
            line.find('|', p2 + 1) != std::string::npos)
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": expected 3 '|'-separated fields");
        losses::PreferencePair pair;
        pair.prompt =
            parse_token_field(line.substr(0, p1), vocab.size, line_no);
        pair.chosen = parse_token_field(line.substr(p1 + 1, p2 - p1 - 1),
                                        vocab.size, line_no);
        pair.rejected =
            parse_token_field(line.substr(p2 + 1), vocab.size, line_no);
        if (pair.chosen.empty() || pair.rejected.empty())
            throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                     ": empty response field");
        out.push_back(std::move(pair));
    }
    return out;
}

namespace {

void write_tokens(std::ostream& out, const policy::TokenSeq& tokens) {
    for (size_t i = 0; i < tokens.size(); ++i)
        out << (i ? " " : "") << tokens[i];
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write dataset: " + path.string());
    out << "# prompt | chosen | rejected\n";
    for (const auto& pair : data) {
        write_tokens(out, pair.prompt);
        out << " | ";
        write_tokens(out, pair.chosen);
        out << " | ";
        write_tokens(out, pair.rejected);
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_task(const std::filesystem::path& path, const TaskSpec& task) {
    task.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write task: " + path.string());
    out << "vocab_size=" << task.vocab.size << "\n"
        << "bos_id=" << task.vocab.bos_id << "\n"
        << "eos_id=" << task.vocab.eos_id << "\n"
        << "window=" << task.window << "\n"
        << "prompt_len=" << task.prompt_len << "\n"
        << "response_len=" << task.response_len << "\n"
        << "seed=" << task.seed << "\n"
        << "scores\n";
    char buf[64];
    for (int row = 0; row < task.contexts(); ++row) {
        for (int j = 0; j < task.vocab.size; ++j) {
            std::snprintf(
                buf, sizeof(buf), "%.17g",
                task.token_score[static_cast<size_t>(row) * task.vocab.size +
                                 j]);
            out << buf << (j + 1 == task.vocab.size ? "" : " ");
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

TaskSpec read_task(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read task: " + path.string());
    TaskSpec task;
    std::string line;
    bool saw_scores = false;
    while (std::getline(in, line)) {
        if (line == "scores") {
            saw_scores = true;
            break;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("malformed task line: " + line);
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "vocab_size")
            task.vocab.size = std::stoi(value);
        else if (key == "bos_id")
            task.vocab.bos_id = std::stoi(value);
        else if (key == "eos_id")
            task.vocab.eos_id = std::stoi(value);
        else if (key == "window")
            task.window = std::stoi(value);
        else if (key == "prompt_len")
            task.prompt_len = std::stoi(value);
        else if (key == "response_len")
            task.response_len = std::stoi(value);
        else if (key == "seed")
            task.seed = std::stoull(value);
        else
            throw std::runtime_error("unknown task key: " + key);
    }
    if (!saw_scores)
        throw std::runtime_error("task file missing score block: " +
                                 path.string());
    task.vocab.validate();
    task.token_score.resize(static_cast<size_t>(task.contexts()) *
                            task.vocab.size);
    for (double& s : task.token_score)
        if (!(in >> s))
            throw std::runtime_error("truncated score block: " + path.string());
    task.validate();
    return task;
}

}  // namespace radpo::datagen
