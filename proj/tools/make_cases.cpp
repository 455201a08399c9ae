// Regenerates the shipped desk cases under cases/.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gridtear/casegen.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Write the shipped desk cases"};
    std::string dir = "cases";
    app.add_option("--dir", dir, "output directory");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(dir);
        {
            std::ofstream out(dir + "/desk_td.json");
            out << gridtear::case_to_json(gridtear::make_desk_td());
        }
        {
            std::ofstream out(dir + "/desk_2net.json");
            out << gridtear::case_to_json(gridtear::make_desk_2net());
        }
        std::cout << "wrote " << dir << "/desk_td.json and " << dir << "/desk_2net.json\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
