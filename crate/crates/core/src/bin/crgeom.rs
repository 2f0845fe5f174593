fn main() {
    std::process::exit(crgeom::cli::main_with_args(std::env::args_os()));
}
