fn main() {
    std::process::exit(geoflow::run(std::env::args_os()));
}
