#include <iostream>

#include <CLI11.hpp>

#include "memodetector/data/synthetic.hpp"

int main(int argc, char** argv) {
    namespace md = memodetector;
    CLI::App app{"memodetector-synth: write a small labelled meme corpus with canned MLLM fixtures"};
    md::data::SyntheticOptions opt;
    std::string out;
    std::string labels;
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--count", opt.count, "number of memes")->default_val(32)->check(CLI::PositiveNumber);
    app.add_option("--seed", opt.seed, "noise and filler seed")->default_val(0);
    app.add_option("--image-size", opt.image_size, "square image side in pixels")
        ->default_val(32)
        ->check(CLI::Range(4, 4096));
    app.add_option("--name", opt.name, "dataset name in the manifest header")->default_val("synthetic");
    app.add_option("--language", opt.language, "language tag for every meme");
    app.add_option("--labels", labels, "comma list of label names (default: seven emotions)");
    CLI11_PARSE(app, argc, argv);

    if (!labels.empty()) {
        opt.labels.clear();
        std::size_t start = 0;
        while (start <= labels.size()) {
            const auto comma = labels.find(',', start);
            const auto end = comma == std::string::npos ? labels.size() : comma;
            if (end > start) opt.labels.push_back(labels.substr(start, end - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (opt.labels.size() < 2) {
            std::cerr << "--labels needs at least two names\n";
            return 2;
        }
    }
    try {
        const auto corpus = md::data::write_synthetic_corpus(out, opt);
        std::cout << "manifest " << corpus.manifest_path.string() << '\n';
        std::cout << "fixtures " << corpus.fixtures_path.string() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
