fn main() {
    std::process::exit(fstl_experiment::cli::run());
}
