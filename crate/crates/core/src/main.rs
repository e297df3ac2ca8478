fn main() {
    std::process::exit(coalesce_bench::cli::run(std::env::args_os()));
}
