// placeholder, replaced as modules land
int main() { return 0; }
