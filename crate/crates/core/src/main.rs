fn main() {
    std::process::exit(essence_kd::cli::run(std::env::args_os()));
}
