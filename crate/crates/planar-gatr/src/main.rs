fn main() {
    std::process::exit(planar_gatr::cli::main_with_args(std::env::args_os()));
}
